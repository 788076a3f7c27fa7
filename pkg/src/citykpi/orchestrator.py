"""City-wide KPI generation.

Urban intervals of constant conditions are turned into per-packet KPI
records: the surrogate is queried once per (cell, interval), packet times
follow the profile's traffic regime, and every packet draws its own drop
flag, delay and throughput by inverse-CDF sampling. Random streams are
partitioned per (cell, interval) so that a what-if change in one cell never
perturbs the draws of another.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import distfit, surrogate, urban
from .distfit import Kpi
from .traffic import generate_timestamps

LOG_COLUMNS = ["cell_id", "entity_id", "profile", "timestamp_s", "delay_ms", "dropped", "throughput_bps"]
REQUIRED_KPIS = (Kpi.DELAY, Kpi.DROP, Kpi.THROUGHPUT)


class ConfigurationError(ValueError):
    pass


class StructureError(ValueError):
    pass


class InjectionKind(str, enum.Enum):
    CELL_OUTAGE = "CellOutage"
    FLOOD_TRAFFIC = "FloodTraffic"
    FAILURE_PROFILE = "FailureProfile"


@dataclass(frozen=True)
class Injection:
    """A what-if perturbation applied to some cells over ``span``.

    ``target`` is a cell id, a list of cell ids, or ``{"area": [x, y, r]}``.
    Payloads: flood ``{"profile": name, "sources": n}``; failure
    ``{"delay": factor, "throughput": factor, "drop": factor}``.
    """

    kind: InjectionKind
    target: object
    span: tuple
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", InjectionKind(self.kind))
        t0, t1 = self.span
        if not t1 > t0:
            raise ValueError(f"injection span {self.span} is empty")

    def targets(self, sites):
        t = self.target
        if isinstance(t, dict) and "area" in t:
            x, y, r = t["area"]
            return {s.cell_id for s in sites if math.hypot(s.location[0] - x, s.location[1] - y) <= r}
        if isinstance(t, (list, tuple)):
            return set(t)
        return {t}


@dataclass(frozen=True)
class Thresholds:
    delay_ms: float = 100.0
    bad_experience_cutoff: float = 0.05
    session_s: float = 60.0
    day_s: float = 86400.0


@dataclass
class Scenario:
    sites: list
    entities: list
    profiles: dict  # name -> TrafficProfile
    horizon: float
    seed: int = 0
    injections: list = field(default_factory=list)
    thresholds: Thresholds = field(default_factory=Thresholds)
    site_features: dict = field(default_factory=dict)  # cell_id -> {axis: value}

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        for e in self.entities:
            if e.profile not in self.profiles:
                raise ConfigurationError(f"entity {e.entity_id!r} uses unknown profile {e.profile!r}")
        ids = {s.cell_id for s in self.sites}
        for inj in self.injections:
            if inj.span[0] < 0 or inj.span[1] > self.horizon:
                raise ConfigurationError(f"injection span {inj.span} outside the horizon")
            missing = inj.targets(self.sites) - ids
            if missing:
                raise StructureError(f"injection targets unknown cells {sorted(missing)}")
            if inj.kind is InjectionKind.FLOOD_TRAFFIC and inj.payload.get("profile") not in self.profiles:
                raise ConfigurationError(f"flood profile {inj.payload.get('profile')!r} is not defined")


@dataclass
class PacketLog:
    cell_id: np.ndarray
    entity_id: np.ndarray
    profile: np.ndarray
    timestamp: np.ndarray
    delay: np.ndarray  # ms, nan when dropped
    dropped: np.ndarray
    throughput: np.ndarray

    def __len__(self):
        return len(self.timestamp)

    @classmethod
    def empty(cls):
        o = np.empty(0, dtype=object)
        return cls(o, o.copy(), o.copy(), np.empty(0), np.empty(0), np.empty(0, dtype=bool), np.empty(0))

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls.__dataclass_fields__))

    def select(self, mask):
        return PacketLog(*(getattr(self, f)[mask] for f in self.__dataclass_fields__))

    def rows(self):
        for i in range(len(self)):
            yield (self.cell_id[i], self.entity_id[i], self.profile[i], repr(float(self.timestamp[i])),
                   repr(float(self.delay[i])), int(self.dropped[i]), repr(float(self.throughput[i])))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            w.writerows(self.rows())

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != LOG_COLUMNS:
                raise StructureError(f"{path}: unexpected packet log columns {header}")
            rows = list(reader)
        if not rows:
            return cls.empty()
        c, e, p, t, d, x, h = zip(*rows)
        return cls(np.array(c, dtype=object), np.array(e, dtype=object), np.array(p, dtype=object),
                   np.array(t, dtype=float), np.array(d, dtype=float), np.array(x) == "1",
                   np.array(h, dtype=float))


def _stable_hash(text):
    return int.from_bytes(hashlib.sha256(str(text).encode()).digest()[:8], "little")


def stream(seed, *keys):
    """Independent generator for ``(seed, *keys)``; keys may be strings."""
    ent = [int(seed)] + [k if isinstance(k, int) else _stable_hash(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(ent)))


def cell_features(scenario: Scenario, site, counts) -> dict:
    feats = {"radius": float(site.radius)}
    total = load = 0.0
    for name, prof in scenario.profiles.items():
        n = float(counts.get(name, 0))
        feats[f"devices.{name}"] = n
        feats[f"rate.{name}"] = float(prof.packet_rate)
        total += n
        load += n * prof.bit_rate
    feats["devices"] = total
    feats["load_bps"] = load
    feats.update(scenario.site_features.get(site.cell_id, {}))
    return feats


def _check_models(models):
    missing = [k.value for k in REQUIRED_KPIS if k not in models]
    if missing:
        raise ConfigurationError(f"surrogate models missing for {missing}")


def _residents(timelines, entities):
    """cell -> profile -> [(t0, t1, entity_id)] sorted by entity id."""
    prof = {e.entity_id: e.profile for e in entities}
    out = defaultdict(lambda: defaultdict(list))
    for eid in sorted(timelines):
        for a, b, cell in timelines[eid]:
            if cell is not None:
                out[cell][prof[eid]].append((a, b, eid))
    return out


def _attribute(pieces, times, slots, cell, profile):
    ids = np.empty(len(times), dtype=object)
    for j, (t, s) in enumerate(zip(times, slots)):
        here = [eid for a, b, eid in pieces if a <= t < b]
        ids[j] = here[s % len(here)] if here else f"~{cell}:{profile}:{s}"
    return ids


def _sub_spans(t0, t1, injections):
    cuts = {t0, t1}
    for inj in injections:
        cuts.update(x for x in inj.span if t0 < x < t1)
    cuts = sorted(cuts)
    return list(zip(cuts, cuts[1:]))


def _draw(dists, n, rng, failure):
    drop = dists[Kpi.DROP]
    p = drop.params[0]
    if failure:
        p = min(1.0, max(0.0, p * failure.get("drop", 1.0)))
    dropped = distfit.uniform_open(rng, n) > 1.0 - p
    delay = distfit.sample_kpi(dists[Kpi.DELAY], rng, n) if n else np.empty(0)
    thr = distfit.sample_kpi(dists[Kpi.THROUGHPUT], rng, n) if n else np.empty(0)
    delay = np.atleast_1d(np.asarray(delay, dtype=float))
    thr = np.atleast_1d(np.asarray(thr, dtype=float))
    if failure:
        delay = delay * failure.get("delay", 1.0)
        thr = thr * failure.get("throughput", 1.0)
    delay = np.where(dropped, np.nan, delay)
    thr = np.where(dropped, 0.0, thr)
    return dropped, delay, thr


@dataclass
class CityRun:
    report: "VerticalReport"
    log: PacketLog
    counts: dict  # (cell, interval index, sub-span index, profile, source) -> packets
    predictions: dict = field(default_factory=dict)  # (cell, interval index, sub-span) -> {kpi: dist}


def run_city(scenario: Scenario, models: dict, intervals) -> CityRun:
    """Generate the packet log and KPI report for ``scenario``."""
    models = {Kpi(k): v for k, v in models.items()}
    _check_models(models)
    sites = {s.cell_id: s for s in scenario.sites}
    for iv in intervals:
        if iv.cell_id not in sites:
            raise StructureError(f"interval references unknown cell {iv.cell_id!r}")
        unknown = set(iv.counts) - set(scenario.profiles)
        if unknown:
            raise StructureError(f"interval for {iv.cell_id!r} uses unknown profiles {sorted(unknown)}")

    timelines = {e.entity_id: urban.entity_timeline(scenario.sites, e, scenario.horizon) for e in scenario.entities}
    residents = _residents(timelines, scenario.entities)
    targeted = defaultdict(list)
    for inj in scenario.injections:
        for c in inj.targets(scenario.sites):
            targeted[c].append(inj)

    by_cell = defaultdict(list)
    for iv in intervals:
        by_cell[iv.cell_id].append(iv)

    parts, counts, predictions = [], {}, {}
    for cell in sorted(by_cell):
        site = sites[cell]
        for k, iv in enumerate(sorted(by_cell[cell], key=lambda x: x.t0)):
            for j, (a, b) in enumerate(_sub_spans(iv.t0, iv.t1, targeted[cell])):
                active = [inj for inj in targeted[cell] if inj.span[0] <= a and b <= inj.span[1]]
                rng = stream(scenario.seed, cell, k, j)
                cond = dict(iv.counts)
                floods = [inj for inj in active if inj.kind is InjectionKind.FLOOD_TRAFFIC]
                for inj in floods:
                    p = inj.payload["profile"]
                    cond[p] = cond.get(p, 0) + int(inj.payload.get("sources", 0))
                feats = cell_features(scenario, site, cond)
                dists = {kpi: surrogate.predict(models[kpi], feats) for kpi in REQUIRED_KPIS}
                predictions[(cell, k, j)] = dists
                outage = any(inj.kind is InjectionKind.CELL_OUTAGE for inj in active)
                failure = {}
                for inj in active:
                    if inj.kind is InjectionKind.FAILURE_PROFILE:
                        for key, factor in inj.payload.items():
                            failure[key] = failure.get(key, 1.0) * float(factor)

                sources = [(p, iv.counts[p], "entity") for p in sorted(iv.counts) if iv.counts[p] > 0]
                sources += [(inj.payload["profile"], int(inj.payload.get("sources", 0)), f"flood{n}")
                            for n, inj in enumerate(floods)]
                for prof_name, n_dev, origin in sources:
                    prof = scenario.profiles[prof_name]
                    times, slots = generate_timestamps(n_dev, prof, (a, b), rng)
                    counts[(cell, k, j, prof_name, origin)] = len(times)
                    if origin == "entity":
                        ids = _attribute(residents[cell][prof_name], times, slots, cell, prof_name)
                    else:
                        ids = np.array([f"~{origin}:{cell}:{s}" for s in slots], dtype=object)
                    dropped, delay, thr = _draw(dists, len(times), rng, failure)
                    if outage:
                        dropped = np.ones(len(times), dtype=bool)
                        delay = np.full(len(times), np.nan)
                        thr = np.zeros(len(times))
                    parts.append(PacketLog(
                        np.full(len(times), cell, dtype=object), ids,
                        np.full(len(times), prof_name, dtype=object), times, delay, dropped, thr,
                    ))
    log = PacketLog.concat(parts)
    report = compute_kpis(log, scenario.thresholds, scenario.horizon)
    return CityRun(report, log, counts, predictions)


# ---------------------------------------------------------------------------
# KPI aggregation

PERCENTILES = (50, 95, 99)


@dataclass
class VerticalReport:
    packets: int
    delivered: int
    drop_rate: float
    network: dict  # cell -> metrics
    users: dict  # entity -> metrics
    vertical: dict
    thresholds: Thresholds

    def to_dict(self):
        return {
            "packets": self.packets,
            "delivered": self.delivered,
            "drop_rate": self.drop_rate,
            "network": self.network,
            "users": self.users,
            "vertical": self.vertical,
            "thresholds": vars(self.thresholds),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["packets"], d["delivered"], d["drop_rate"], d["network"], d["users"], d["vertical"],
                   Thresholds(**d["thresholds"]))

    def write(self, out_dir):
        """``report.json`` plus ``cells.csv``; returns the two paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=1, sort_keys=True)
            fh.write("\n")
        cols = ["packets", "drop_rate", "mean_delay_ms", "p50_delay_ms", "p95_delay_ms", "p99_delay_ms",
                "jitter_ms", "mean_throughput_bps"]
        with open(out / "cells.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell_id"] + cols)
            for cell, m in sorted(self.network.items()):
                w.writerow([cell] + [repr(m[c]) if isinstance(m[c], float) else m[c] for c in cols])
        return [out / "report.json", out / "cells.csv"]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def _jitter(times, delays):
    """Standard deviation of consecutive-packet delay differences."""
    order = np.argsort(times, kind="stable")
    d = np.diff(delays[order])
    return float(np.std(d)) if len(d) >= 1 else 0.0


def _delay_stats(delay):
    if len(delay) == 0:
        return {"mean_delay_ms": math.nan, **{f"p{q}_delay_ms": math.nan for q in PERCENTILES}}
    pct = np.percentile(delay, PERCENTILES)
    return {"mean_delay_ms": float(np.mean(delay)), **{f"p{q}_delay_ms": float(v) for q, v in zip(PERCENTILES, pct)}}


def compute_kpis(log: PacketLog, thresholds: Thresholds = Thresholds(), horizon=None) -> VerticalReport:
    """Network KPIs per cell, user KPIs per entity and the vertical
    "bad experience" fraction.

    Percentiles use linear interpolation between order statistics. A packet
    violates the delay threshold if it is dropped or its delay exceeds
    ``thresholds.delay_ms``. Entities whose id starts with ``~`` (synthetic
    or flood sources) are left out of the user and vertical KPIs.
    """
    n = len(log)
    ok = ~log.dropped
    network = {}
    for cell in sorted(set(log.cell_id.tolist())):
        m = log.cell_id == cell
        sel = m & ok
        network[cell] = {
            "packets": int(m.sum()),
            "drop_rate": float(log.dropped[m].mean()),
            **_delay_stats(log.delay[sel]),
            "jitter_ms": _jitter(log.timestamp[sel], log.delay[sel]),
            "mean_throughput_bps": float(log.throughput[sel].mean()) if sel.any() else 0.0,
        }

    viol = log.dropped | (np.nan_to_num(log.delay, nan=np.inf) > thresholds.delay_ms)
    users = {}
    entity_days = bad_days = 0
    real = np.array([not str(e).startswith("~") for e in log.entity_id], dtype=bool)
    for ent in sorted(set(log.entity_id[real].tolist())):
        m = log.entity_id == ent
        t = log.timestamp[m]
        sessions = []
        sess_idx = np.floor(t / thresholds.session_s).astype(np.int64)
        for s in np.unique(sess_idx):
            sm = sess_idx == s
            d = np.where(log.dropped[m][sm], np.inf, log.delay[m][sm])
            delivered = d[np.isfinite(d)]
            with np.errstate(invalid="ignore"):
                p95 = float(np.percentile(d, 95))
            if math.isnan(p95):
                p95 = math.inf
            sessions.append({
                "start_s": float(s * thresholds.session_s),
                "packets": int(sm.sum()),
                "p95_delay_ms": p95,
                "violates": bool(p95 > thresholds.delay_ms),
                "jitter_ms": _jitter(t[sm][np.isfinite(d)], delivered) if len(delivered) > 1 else 0.0,
            })
        days = np.floor(t / thresholds.day_s).astype(np.int64)
        bad = 0
        for dd in np.unique(days):
            dm = days == dd
            rate = float(viol[m][dm].mean())
            entity_days += 1
            if rate > thresholds.bad_experience_cutoff:
                bad += 1
        bad_days += bad
        users[ent] = {
            "packets": int(m.sum()),
            "drop_rate": float(log.dropped[m].mean()),
            "violation_rate": float(viol[m].mean()),
            "sessions": sessions,
            "bad_days": bad,
            "days": int(len(np.unique(days))),
        }
    vertical = {
        "entity_days": entity_days,
        "bad_entity_days": bad_days,
        "bad_experience_fraction": bad_days / entity_days if entity_days else 0.0,
        "horizon_s": float(horizon) if horizon is not None else (float(log.timestamp.max()) if n else 0.0),
    }
    return VerticalReport(n, int(ok.sum()), float(log.dropped.mean()) if n else 0.0, network, users, vertical,
                          thresholds)


# ---------------------------------------------------------------------------
# what-if

DELTA_METRICS = ("drop_rate", "mean_delay_ms", "p95_delay_ms", "mean_throughput_bps")


def _delta(a, b):
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return 0.0
    return b - a


def whatif(scenario: Scenario, overlay, models, intervals) -> dict:
    """Run ``scenario`` with and without the ``overlay`` injections under the
    same seed and report per-KPI deltas (injected minus baseline)."""
    import dataclasses

    base = dataclasses.replace(scenario, injections=list(scenario.injections))
    injected = dataclasses.replace(scenario, injections=list(scenario.injections) + list(overlay))
    r0 = run_city(base, models, intervals)
    r1 = run_city(injected, models, intervals)
    cells = sorted(set(r0.report.network) | set(r1.report.network))
    per_cell = {}
    for c in cells:
        m0, m1 = r0.report.network.get(c, {}), r1.report.network.get(c, {})
        per_cell[c] = {k: _delta(m0.get(k, math.nan), m1.get(k, math.nan)) for k in DELTA_METRICS}
    summary = {
        "drop_rate": r1.report.drop_rate - r0.report.drop_rate,
        "bad_experience_fraction": r1.report.vertical["bad_experience_fraction"]
        - r0.report.vertical["bad_experience_fraction"],
        "packets": r1.report.packets - r0.report.packets,
    }
    return {"baseline": r0, "injected": r1, "cells": per_cell, "summary": summary}
