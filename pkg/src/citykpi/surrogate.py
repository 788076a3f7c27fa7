"""Regression from cell conditions to fitted KPI-distribution parameters.

Two regressors are available. ``MultilinearInterp`` interpolates on a full
Cartesian sweep grid and reproduces the knots exactly. ``PolynomialRidge``
is a ridge-regularised polynomial (degree <= 2) for sparse or irregular
tables. Condition axes are rescaled to [0, 1] over the training domain.
Interpolation works on the raw parameters (convex weights keep them in
their support); the polynomial regresses positive parameters as logs.
"""
from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .distfit import POSITIVE_PARAMS, Family, Kpi, KpiDistribution

FORMAT_TAG = "citykpi-surrogate/1"
SCALE_FLOOR = 1e-12


class StructureError(ValueError):
    pass


class ConditioningError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class Regressor(str, enum.Enum):
    MULTILINEAR = "MultilinearInterp"
    POLYNOMIAL = "PolynomialRidge"


@dataclass(frozen=True)
class SurrogateModel:
    kpi: Kpi
    family: Family
    regressor: Regressor
    axes: tuple  # all condition axes, sorted
    domain: dict  # axis -> (min, max)
    regressors: tuple  # one dict per distribution parameter
    training_error: tuple  # RMSE per parameter
    degree: int = 1
    ridge: float = 0.0
    exponents: tuple = field(default=())

    @property
    def active_axes(self):
        return tuple(a for a in self.axes if self.domain[a][1] > self.domain[a][0])


def _to_reg(family, params):
    return [math.log(p) if pos else p for p, pos in zip(params, POSITIVE_PARAMS[family])]


def _from_reg(family, values):
    out = []
    for v, pos in zip(values, POSITIVE_PARAMS[family]):
        out.append(max(math.exp(min(v, 700.0)), SCALE_FLOOR) if pos else v)
    if family is Family.BERNOULLI:
        out[0] = min(max(out[0], 0.0), 1.0)
    return tuple(out)


def _standardize(model_axes, domain, point):
    z = []
    for a in model_axes:
        lo, hi = domain[a]
        z.append((point[a] - lo) / (hi - lo))
    return np.array(z, dtype=float)


def _exponents(n_axes, degree):
    exps = [e for e in itertools.product(range(degree + 1), repeat=n_axes) if sum(e) <= degree]
    return sorted(exps, key=lambda e: (sum(e), tuple(-x for x in e)))


def _design(z, exps):
    z = np.atleast_2d(z)
    return np.column_stack([np.prod(z ** np.array(e), axis=1) if e else np.ones(len(z)) for e in exps])


def _entries_for(table, kpi):
    kpi = Kpi(kpi)
    rows = [e for e in table if e.dist.kpi is kpi]
    if not rows:
        raise StructureError(f"distribution table has no {kpi.value} rows")
    families = {e.dist.family for e in rows}
    if len(families) != 1:
        raise StructureError(f"{kpi.value} rows mix families {sorted(f.value for f in families)}")
    axes = sorted(rows[0].point)
    for e in rows:
        if sorted(e.point) != axes:
            raise StructureError(f"inconsistent condition axes: {sorted(e.point)} vs {axes}")
    keys = [e.key for e in rows]
    if len(set(keys)) != len(keys):
        raise StructureError("duplicate condition points in table")
    return rows, families.pop(), axes


def train(table, kpi, regressor=Regressor.MULTILINEAR, degree=1, ridge=1e-8) -> SurrogateModel:
    """Fit one regressor per distribution parameter of ``kpi``."""
    regressor = Regressor(regressor)
    rows, family, axes = _entries_for(table, kpi)
    domain = {a: (min(float(e.point[a]) for e in rows), max(float(e.point[a]) for e in rows)) for a in axes}
    active = [a for a in axes if domain[a][1] > domain[a][0]]
    targets = np.array([_to_reg(family, e.dist.params) for e in rows])
    z = np.array([_standardize(active, domain, {k: float(v) for k, v in e.point.items()}) for e in rows])
    z = z.reshape(len(rows), len(active))

    if regressor is Regressor.MULTILINEAR:
        knots = [sorted({float(e.point[a]) for e in rows}) for a in active]
        shape = tuple(len(k) for k in knots)
        if len(rows) != int(np.prod(shape, dtype=np.int64)):
            raise StructureError(
                f"table has {len(rows)} points but the grid over {active} needs {int(np.prod(shape))}"
            )
        values = np.full(shape + (targets.shape[1],), np.nan)
        for e in rows:
            idx = tuple(k.index(float(e.point[a])) for k, a in zip(knots, active))
            values[idx] = e.dist.params
        if np.isnan(values).any():
            raise StructureError("incomplete sweep grid")
        regs = tuple(
            {"knots": [[(v - domain[a][0]) / (domain[a][1] - domain[a][0]) for v in k] for k, a in zip(knots, active)],
             "values": values[..., j].tolist()}
            for j in range(targets.shape[1])
        )
        model = SurrogateModel(Kpi(kpi), family, regressor, tuple(axes), domain, regs, (), degree, 0.0)
    else:
        if not 1 <= degree <= 2:
            raise ConfigurationError("polynomial degree must be 1 or 2")
        exps = _exponents(len(active), degree)
        if len(rows) < len(exps):
            raise ConditioningError(f"{len(rows)} points cannot support {len(exps)} polynomial terms")
        X = _design(z, exps)
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise ConditioningError("polynomial design matrix is rank deficient")
        penalty = ridge * np.eye(X.shape[1])
        penalty[0, 0] = 0.0
        coef = np.linalg.solve(X.T @ X + penalty, X.T @ targets)
        regs = tuple({"coefficients": coef[:, j].tolist()} for j in range(targets.shape[1]))
        model = SurrogateModel(Kpi(kpi), family, regressor, tuple(axes), domain, regs, (), degree, ridge,
                               tuple(tuple(e) for e in exps))

    fitted = np.array([_raw_predict(model, zi) for zi in z])
    params = np.array([e.dist.params for e in rows])
    rmse = tuple(float(x) for x in np.sqrt(np.mean((fitted - params) ** 2, axis=0)))
    return SurrogateModel(model.kpi, model.family, model.regressor, model.axes, model.domain,
                          model.regressors, rmse, model.degree, model.ridge, model.exponents)


def _cell(knots, z):
    lower, frac = [], []
    for k, zi in zip(knots, z):
        k = np.asarray(k)
        i = int(np.clip(np.searchsorted(k, zi, side="right") - 1, 0, len(k) - 1))
        if i == len(k) - 1:
            if len(k) == 1:
                lower.append(0)
                frac.append(0.0)
                continue
            i -= 1
        lower.append(i)
        frac.append((zi - k[i]) / (k[i + 1] - k[i]))
    return lower, frac


def _multilinear(knots, values, z):
    values = np.asarray(values)
    if not knots:
        return float(values)
    lower, frac = _cell(knots, z)
    total = 0.0
    for corner in itertools.product((0, 1), repeat=len(knots)):
        w = 1.0
        for c, f in zip(corner, frac):
            w *= f if c else 1.0 - f
        if w == 0.0:
            continue
        total += w * values[tuple(l + c for l, c in zip(lower, corner))]
    return float(total)


def _raw_predict(model, z):
    if model.regressor is Regressor.MULTILINEAR:
        return tuple(_multilinear(r["knots"], r["values"], z) for r in model.regressors)
    X = _design(np.asarray(z, dtype=float).reshape(1, -1), model.exponents)
    reg = [float((X @ np.asarray(r["coefficients"]))[0]) for r in model.regressors]
    return _from_reg(model.family, reg)


def predict(model: SurrogateModel, conditions) -> KpiDistribution:
    """Distribution of ``model.kpi`` at ``conditions`` (a feature mapping or
    a :class:`~citykpi.cellsim.CellConditions`).

    Queries outside the training domain are clamped to its boundary and the
    result carries a note saying so.
    """
    if not isinstance(conditions, dict):
        from .cellsim import condition_features
        conditions = condition_features(conditions)
    missing = [a for a in model.axes if a not in conditions]
    if missing:
        raise ConfigurationError(f"conditions lack surrogate axes {missing}")
    notes = []
    point = {}
    for a in model.axes:
        lo, hi = model.domain[a]
        v = float(conditions[a])
        if v < lo or v > hi:
            notes.append(f"extrapolation: {a}={v:g} clamped to [{lo:g}, {hi:g}]")
            v = min(max(v, lo), hi)
        point[a] = v
    z = _standardize(model.active_axes, model.domain, point)
    params = _raw_predict(model, z)
    return KpiDistribution(model.kpi, model.family, params, 0.0, 0, tuple(notes))


# ---------------------------------------------------------------------------
# persistence

def to_dict(model: SurrogateModel) -> dict:
    return {
        "kpi": model.kpi.value,
        "family": model.family.value,
        "regressor": model.regressor.value,
        "axes": list(model.axes),
        "domain": {a: list(v) for a, v in model.domain.items()},
        "regressors": list(model.regressors),
        "training_error": list(model.training_error),
        "degree": model.degree,
        "ridge": model.ridge,
        "exponents": [list(e) for e in model.exponents],
    }


def from_dict(d: dict) -> SurrogateModel:
    return SurrogateModel(
        Kpi(d["kpi"]), Family(d["family"]), Regressor(d["regressor"]), tuple(d["axes"]),
        {a: tuple(v) for a, v in d["domain"].items()}, tuple(d["regressors"]),
        tuple(d["training_error"]), d["degree"], d["ridge"], tuple(tuple(e) for e in d["exponents"]),
    )


def save_models(models: dict, path):
    doc = {"format": FORMAT_TAG, "models": [to_dict(models[k]) for k in sorted(models, key=lambda k: Kpi(k).value)]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_models(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT_TAG:
        raise StructureError(f"{path}: unsupported model format {doc.get('format')!r}")
    models = [from_dict(m) for m in doc["models"]]
    return {m.kpi: m for m in models}


def train_all(table, kpis=None, regressor=Regressor.MULTILINEAR, **kw) -> dict:
    kpis = kpis or sorted({e.dist.kpi for e in table}, key=lambda k: k.value)
    return {Kpi(k): train(table, k, regressor, **kw) for k in kpis}
