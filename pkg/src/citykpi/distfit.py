"""Parametric KPI distributions: maximum-likelihood fitting, Kolmogorov-Smirnov
goodness of fit and inverse-CDF random generation.

Parameter order per family::

    LogNormal    (mu, sigma)      of log(x)
    Gamma        (shape, scale)
    Exponential  (rate,)
    Bernoulli    (p,)
"""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

MIN_SAMPLES = 30
BISECTION_TOL = 1e-10  # relative bracket width
_SCALE_FLOOR = 1e-12


class InsufficientDataError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class Kpi(str, enum.Enum):
    DELAY = "Delay"
    DROP = "DropProbability"
    THROUGHPUT = "Throughput"


class Family(str, enum.Enum):
    LOGNORMAL = "LogNormal"
    GAMMA = "Gamma"
    EXPONENTIAL = "Exponential"
    BERNOULLI = "Bernoulli"


PARAM_NAMES = {
    Family.LOGNORMAL: ("mu", "sigma"),
    Family.GAMMA: ("shape", "scale"),
    Family.EXPONENTIAL: ("rate",),
    Family.BERNOULLI: ("p",),
}

# which parameters must stay strictly positive / inside [0, 1]
POSITIVE_PARAMS = {
    Family.LOGNORMAL: (False, True),
    Family.GAMMA: (True, True),
    Family.EXPONENTIAL: (True,),
    Family.BERNOULLI: (False,),
}

DEFAULT_FAMILY = {Kpi.DELAY: Family.LOGNORMAL, Kpi.DROP: Family.BERNOULLI, Kpi.THROUGHPUT: Family.GAMMA}


@dataclass(frozen=True)
class KpiDistribution:
    kpi: Kpi
    family: Family
    params: tuple
    ks_statistic: float = 0.0
    sample_count: int = 0
    notes: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kpi", Kpi(self.kpi))
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        check_params(self.family, self.params)
        if not 0.0 <= self.ks_statistic <= 1.0:
            raise DomainError(f"ks_statistic {self.ks_statistic} outside [0, 1]")

    def mean(self):
        f, p = self.family, self.params
        if f is Family.LOGNORMAL:
            return math.exp(p[0] + 0.5 * p[1] ** 2)
        if f is Family.GAMMA:
            return p[0] * p[1]
        if f is Family.EXPONENTIAL:
            return 1.0 / p[0]
        return p[0]


def check_params(family, params):
    family = Family(family)
    if len(params) != len(PARAM_NAMES[family]):
        raise DomainError(f"{family.value} takes {len(PARAM_NAMES[family])} parameters, got {len(params)}")
    if not all(math.isfinite(p) for p in params):
        raise DomainError(f"non-finite parameters {params}")
    for value, positive in zip(params, POSITIVE_PARAMS[family]):
        if positive and value <= 0:
            raise DomainError(f"{family.value} parameters {params} must be positive")
    if family is Family.BERNOULLI and not 0.0 <= params[0] <= 1.0:
        raise DomainError(f"Bernoulli p={params[0]} outside [0, 1]")


def cdf(dist: KpiDistribution, x):
    x = np.asarray(x, dtype=float)
    f, p = dist.family, dist.params
    if f is Family.LOGNORMAL:
        with np.errstate(divide="ignore"):
            z = (np.log(np.where(x > 0, x, 1.0)) - p[0]) / p[1]
        return np.where(x > 0, special.ndtr(z), 0.0)
    if f is Family.GAMMA:
        return np.where(x > 0, special.gammainc(p[0], np.maximum(x, 0) / p[1]), 0.0)
    if f is Family.EXPONENTIAL:
        return np.where(x > 0, -np.expm1(-p[0] * np.maximum(x, 0)), 0.0)
    return np.where(x < 0, 0.0, np.where(x < 1, 1.0 - p[0], 1.0))


def ks_statistic(samples, cdf_fn) -> float:
    """One-sample KS distance between the empirical CDF and ``cdf_fn``."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        return 0.0
    f = cdf_fn(x)
    i = np.arange(1, n + 1)
    # for repeated values only the last index of a run sees the full jump
    last = np.r_[x[1:] != x[:-1], True]
    first = np.r_[True, x[1:] != x[:-1]]
    d_plus = np.max((i / n - f)[last])
    d_minus = np.max((f - (i - 1) / n)[first])
    return float(np.clip(max(d_plus, d_minus), 0.0, 1.0))


def ks_distance(a, b) -> float:
    """Two-sample KS distance (sup-norm between the two empirical CDFs)."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if len(a) == 0 or len(b) == 0:
        raise InsufficientDataError("two-sample KS needs non-empty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def kolmogorov_critical(n, alpha=0.01, m=None):
    """Asymptotic KS critical value for one sample of size ``n`` (or two
    samples of sizes ``n`` and ``m``)."""
    c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    eff = n if m is None else n * m / (n + m)
    return c / math.sqrt(eff)


def _gamma_shape(mean_x, mean_log):
    s = math.log(mean_x) - mean_log
    if s <= 0:
        # numerically constant sample: concentrate the shape
        return 1.0 / _SCALE_FLOOR
    k = (3.0 - s + math.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    for _ in range(100):
        g = math.log(k) - special.digamma(k) - s
        dg = 1.0 / k - special.polygamma(1, k)
        step = g / dg
        k_new = k - step
        if k_new <= 0:
            k_new = k / 2.0
        if abs(k_new - k) <= 1e-14 * k:
            return k_new
        k = k_new
    return k


def fit(samples, family, kpi=None) -> KpiDistribution:
    """Maximum-likelihood fit of ``family`` to ``samples``."""
    family = Family(family)
    x = np.asarray(samples, dtype=float).ravel()
    if kpi is None:
        kpi = Kpi.DROP if family is Family.BERNOULLI else Kpi.DELAY
    if len(x) < MIN_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_SAMPLES} samples, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise DomainError("samples must be finite")
    if family is Family.BERNOULLI:
        if not np.all((x == 0) | (x == 1)):
            raise DomainError("Bernoulli samples must be 0 or 1")
        params = (float(x.mean()),)
    else:
        if np.any(x <= 0):
            raise DomainError(f"{family.value} samples must be positive")
        if family is Family.LOGNORMAL:
            lx = np.log(x)
            params = (float(lx.mean()), max(float(lx.std()), _SCALE_FLOOR))
        elif family is Family.EXPONENTIAL:
            params = (1.0 / float(x.mean()),)
        else:
            m = float(x.mean())
            k = _gamma_shape(m, float(np.log(x).mean()))
            params = (k, m / k)
    dist = KpiDistribution(kpi, family, params, 0.0, len(x))
    ks = ks_statistic(x, lambda v: cdf(dist, v))
    return KpiDistribution(kpi, family, params, ks, len(x))


def select_family(samples, candidates, kpi=None) -> KpiDistribution:
    """Fit every candidate family and keep the one with the smallest KS
    statistic (first listed wins ties)."""
    candidates = list(candidates)
    if not candidates:
        raise ConfigurationError("no candidate families given")
    best = None
    for fam in candidates:
        d = fit(samples, fam, kpi)
        if best is None or d.ks_statistic < best.ks_statistic:
            best = d
    return best


def _bisect_cdf(dist, u):
    lo = np.zeros_like(u)
    hi = np.full_like(u, max(dist.mean(), 1e-300))
    for _ in range(2100):
        short = cdf(dist, hi) < u
        if not short.any():
            break
        hi = np.where(short, hi * 2.0, hi)
    for _ in range(2200):
        mid = 0.5 * (lo + hi)
        below = cdf(dist, mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        width = hi - lo
        if np.all((width <= BISECTION_TOL * hi) | (width <= 4 * np.spacing(hi))):
            break
    return 0.5 * (lo + hi)


def inverse_cdf(dist: KpiDistribution, u):
    """Quantile function ``F^-1(u)`` for ``u`` in the open interval (0, 1)."""
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("u must lie strictly between 0 and 1")
    f, p = dist.family, dist.params
    if f is Family.EXPONENTIAL:
        x = -np.log1p(-u) / p[0]
    elif f is Family.BERNOULLI:
        x = (u > 1.0 - p[0]).astype(float)
    else:
        x = _bisect_cdf(dist, u)
    return float(x[0]) if scalar else x


def uniform_open(rng: np.random.Generator, size=None):
    """Uniform draws on the open interval (0, 1)."""
    k = rng.integers(0, 2**53, size=size)
    return (np.asarray(k, dtype=float) + 0.5) / 2.0**53


def sample_kpi(dist: KpiDistribution, rng: np.random.Generator, size=None):
    """Inverse-transform draws from ``dist``."""
    u = uniform_open(rng, size)
    return inverse_cdf(dist, u)


# ---------------------------------------------------------------------------
# distribution table

TABLE_COLUMNS = ["point", "kpi", "family", "params", "ks", "n"]


@dataclass(frozen=True)
class TableEntry:
    point: dict
    dist: KpiDistribution

    @property
    def key(self):
        return json.dumps(self.point, sort_keys=True)


def write_table(entries, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for e in entries:
            d = e.dist
            w.writerow([e.key, d.kpi.value, d.family.value, json.dumps([repr(p) for p in d.params]),
                        repr(d.ks_statistic), d.sample_count])


def read_table(path) -> list[TableEntry]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TABLE_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header}")
        for point, kpi, family, params, ks, n in reader:
            params = tuple(float(p) for p in json.loads(params))
            out.append(TableEntry(json.loads(point), KpiDistribution(kpi, family, params, float(ks), int(n))))
    return out


SAMPLE_KEY = {Kpi.DELAY: "delay", Kpi.THROUGHPUT: "throughput", Kpi.DROP: "drop"}


def fit_table(points, families=None, candidates=None, min_samples=MIN_SAMPLES) -> list[TableEntry]:
    """Fit every KPI at every sweep point.

    ``points`` yields ``(point dict, kpi samples)`` where the samples map
    ``"delay"``, ``"throughput"`` and ``"drop"`` to arrays. A KPI listed in
    ``candidates`` gets the single family with the lowest mean KS statistic
    over all points, so that one regressor can serve the whole table.
    Points with fewer than ``min_samples`` samples are skipped for that KPI.
    """
    families = {Kpi(k): Family(v) for k, v in (families or {}).items()}
    candidates = {Kpi(k): [Family(f) for f in v] for k, v in (candidates or {}).items()}
    points = [(dict(p), s) for p, s in points]
    chosen = {}
    for kpi in Kpi:
        if kpi in candidates:
            usable = [s[SAMPLE_KEY[kpi]] for _, s in points if len(s[SAMPLE_KEY[kpi]]) >= min_samples]
            if not usable:
                continue
            scores = [np.mean([fit(x, fam, kpi).ks_statistic for x in usable]) for fam in candidates[kpi]]
            chosen[kpi] = candidates[kpi][int(np.argmin(scores))]
        else:
            chosen[kpi] = families.get(kpi, DEFAULT_FAMILY[kpi])
    entries = []
    for point, samples in points:
        for kpi in (Kpi.DELAY, Kpi.DROP, Kpi.THROUGHPUT):
            x = samples[SAMPLE_KEY[kpi]]
            if kpi in chosen and len(x) >= min_samples:
                entries.append(TableEntry(point, fit(x, chosen[kpi], kpi)))
    return entries
