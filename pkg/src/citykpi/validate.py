"""Surrogate-versus-detailed-simulator validation.

For each condition point the detailed simulator (or an externally measured
packet log) supplies reference KPI samples; the surrogate supplies generated
samples. Agreement is scored by the two-sample KS distance and the error of
the means.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import cellsim, distfit, surrogate
from .distfit import Kpi

KPI_SAMPLE_KEY = {Kpi.DELAY: "delay", Kpi.THROUGHPUT: "throughput", Kpi.DROP: "drop"}


@dataclass(frozen=True)
class Tolerances:
    ks: float = 0.05
    mean: float = 0.10


@dataclass
class ValidationEntry:
    point: dict
    kpi: str
    ks_distance: float
    mean_error: float
    n_reference: int
    n_generated: int
    passed: bool
    error: str | None = None


@dataclass
class ValidationReport:
    entries: list = field(default_factory=list)
    tolerances: Tolerances = field(default_factory=Tolerances)
    metric: str = "two-sample KS distance + mean error"

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def to_dict(self):
        return {
            "metric": self.metric,
            "tolerances": {"ks": self.tolerances.ks, "mean": self.tolerances.mean},
            "passed": self.passed,
            "entries": [vars(e) for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d):
        return cls([ValidationEntry(**e) for e in d["entries"]], Tolerances(**d["tolerances"]), d["metric"])

    def write(self, out_dir):
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "validation.json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(out / "validation.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["point", "kpi", "ks_distance", "mean_error", "n_reference", "n_generated", "passed"])
            for e in self.entries:
                w.writerow([json.dumps(e.point, sort_keys=True), e.kpi, repr(e.ks_distance), repr(e.mean_error),
                            e.n_reference, e.n_generated, int(e.passed)])
        return [out / "validation.json", out / "validation.csv"]


@dataclass(frozen=True)
class SimConfig:
    """How the detailed simulator is run for a reference sample."""

    base: cellsim.CellConditions
    duration: float = 10.0
    replications: int = 1
    seed: int = 0


def mean_error(kpi, generated, reference):
    """Relative error of the means; absolute difference for drop rates."""
    g, r = float(np.mean(generated)), float(np.mean(reference))
    if Kpi(kpi) is Kpi.DROP:
        return g - r
    return (g - r) / r if r != 0 else (0.0 if g == 0 else math.inf)


def reference_samples(base, point, sim: SimConfig, index=0):
    cond = base
    for axis, value in point.items():
        cond = cellsim.apply_axis(cond, axis, value)
    records = []
    for rep in range(sim.replications):
        records.extend(cellsim.run_cell(cond, sim.duration, cellsim.point_seed(sim.seed, index, rep)))
    return cond, cellsim.kpi_samples(records)


def samples_from_packet_log(path):
    """KPI samples from a packet-log CSV (e.g. measurements of a real cell)."""
    from .orchestrator import PacketLog

    log = PacketLog.read_csv(path)
    ok = ~log.dropped
    return {"delay": log.delay[ok], "throughput": log.throughput[ok], "drop": log.dropped.astype(float)}


def cross_validate(points, models, sim: SimConfig, n_samples=10_000, tolerances=Tolerances(),
                   references=None, seed=0) -> ValidationReport:
    """Score the surrogate against reference samples at each point.

    ``points`` are condition dicts (sweep-axis -> value). ``references`` may
    map a point index to precomputed KPI samples, bypassing the simulator.
    Failures at one point are recorded and the batch carries on.
    """
    models = {Kpi(k): v for k, v in models.items()}
    report = ValidationReport(tolerances=tolerances)
    for i, point in enumerate(points):
        try:
            if references is not None and i in references:
                cond = sim.base
                for axis, value in point.items():
                    cond = cellsim.apply_axis(cond, axis, value)
                ref = references[i]
            else:
                cond, ref = reference_samples(sim.base, point, sim, i)
            feats = cellsim.condition_features(cond)
        except Exception as exc:
            for kpi in sorted(models, key=lambda k: k.value):
                report.entries.append(ValidationEntry(dict(point), kpi.value, 1.0, math.inf, 0, 0, False,
                                                      f"{type(exc).__name__}: {exc}"))
            continue
        for kpi in sorted(models, key=lambda k: k.value):
            try:
                reference = np.asarray(ref[KPI_SAMPLE_KEY[kpi]], dtype=float)
                if len(reference) == 0:
                    raise distfit.InsufficientDataError("no reference samples")
                dist = surrogate.predict(models[kpi], feats)
                rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i, len(kpi.value)])))
                generated = np.atleast_1d(distfit.sample_kpi(dist, rng, n_samples))
                ks = distfit.ks_distance(generated, reference)
                err = mean_error(kpi, generated, reference)
                ok = ks < tolerances.ks and abs(err) < tolerances.mean
                report.entries.append(ValidationEntry(dict(point), kpi.value, ks, err, len(reference),
                                                      len(generated), bool(ok)))
            except Exception as exc:
                report.entries.append(ValidationEntry(dict(point), kpi.value, 1.0, math.inf, 0, 0, False,
                                                      f"{type(exc).__name__}: {exc}"))
    return report
