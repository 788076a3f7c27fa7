"""One-way urban activity simulator.

Entities move along piecewise-linear routes and attach to the nearest cell
whose disc covers them. The output is, for every cell, a list of intervals
over which the per-profile device counts are treated as constant. Nothing
here reads telecom results; the data flow is urban -> telecom only.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .channel import RadioConfig

_TIME_EPS = 1e-12


@dataclass(frozen=True)
class CellSite:
    cell_id: str
    location: tuple
    radius: float
    radio: RadioConfig = field(default_factory=RadioConfig)
    channel: str = "default"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"cell {self.cell_id!r}: radius must be positive")
        object.__setattr__(self, "location", (float(self.location[0]), float(self.location[1])))


@dataclass(frozen=True)
class MobileEntity:
    entity_id: str
    profile: str
    route: tuple  # ((x, y, t), ...)
    active_window: tuple = (-math.inf, math.inf)

    def __post_init__(self):
        route = tuple((float(x), float(y), float(t)) for x, y, t in self.route)
        if not route:
            raise ValueError(f"entity {self.entity_id!r}: empty route")
        times = [w[2] for w in route]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"entity {self.entity_id!r}: waypoint times must increase strictly")
        object.__setattr__(self, "route", route)
        t0, t1 = self.active_window
        if not t1 >= t0:
            raise ValueError(f"entity {self.entity_id!r}: bad active window")

    def position(self, t):
        r = self.route
        if t <= r[0][2]:
            return r[0][0], r[0][1]
        if t >= r[-1][2]:
            return r[-1][0], r[-1][1]
        times = [w[2] for w in r]
        i = int(np.searchsorted(times, t, side="right")) - 1
        (x0, y0, t0), (x1, y1, t1) = r[i], r[i + 1]
        f = (t - t0) / (t1 - t0)
        return x0 + f * (x1 - x0), y0 + f * (y1 - y0)

    def scaled(self, factor):
        """Same path traversed ``factor`` times faster (times divided)."""
        return MobileEntity(self.entity_id, self.profile,
                            tuple((x, y, t / factor) for x, y, t in self.route), self.active_window)


@dataclass(frozen=True)
class ConditionInterval:
    cell_id: str
    t0: float
    t1: float
    counts: dict  # profile -> devices

    @property
    def total(self):
        return sum(self.counts.values())

    @property
    def length(self):
        return self.t1 - self.t0


def assign_cell(sites, position):
    """Nearest covering site (lowest cell_id on ties), or None."""
    x, y = position
    best = None
    for s in sites:
        d = math.hypot(x - s.location[0], y - s.location[1])
        if d <= s.radius:
            key = (d, s.cell_id)
            if best is None or key < best:
                best = key
    return None if best is None else best[1]


def _segment_crossings(sites, p0, v, s_max):
    """Times in (0, s_max) at which the nearest-covering-site assignment of
    ``p0 + s v`` may change: disc boundary and bisector crossings."""
    out = []
    vv = v[0] * v[0] + v[1] * v[1]
    if vv == 0:
        return out
    for s in sites:
        dx, dy = p0[0] - s.location[0], p0[1] - s.location[1]
        b = 2.0 * (v[0] * dx + v[1] * dy)
        c = dx * dx + dy * dy - s.radius * s.radius
        disc = b * b - 4.0 * vv * c
        if disc >= 0:
            r = math.sqrt(disc)
            out.extend(((-b - r) / (2 * vv), (-b + r) / (2 * vv)))
    for i, a in enumerate(sites):
        for c2 in sites[i + 1:]:
            ex, ey = c2.location[0] - a.location[0], c2.location[1] - a.location[1]
            den = 2.0 * (v[0] * ex + v[1] * ey)
            if den == 0:
                continue
            num = (c2.location[0] ** 2 + c2.location[1] ** 2) - (a.location[0] ** 2 + a.location[1] ** 2) \
                - 2.0 * (p0[0] * ex + p0[1] * ey)
            out.append(num / den)
    return [s for s in out if 0 < s < s_max]


def entity_timeline(sites, entity: MobileEntity, horizon):
    """Residency of one entity as ``[(t0, t1, cell_id or None), ...]``.

    Covers the entity's active window clipped to ``[0, horizon)``; crossing
    times are exact (closed form for the linear route legs).
    """
    start = max(0.0, entity.active_window[0])
    end = min(float(horizon), entity.active_window[1])
    if not end > start:
        return []
    cuts = {start, end}
    r = entity.route
    for (x0, y0, t0), (x1, y1, t1) in zip(r, r[1:]):
        if t1 <= start or t0 >= end:
            continue
        cuts.update(t for t in (t0, t1) if start < t < end)
        v = ((x1 - x0) / (t1 - t0), (y1 - y0) / (t1 - t0))
        for s in _segment_crossings(sites, (x0, y0), v, t1 - t0):
            if start < t0 + s < end:
                cuts.add(t0 + s)
    cuts = sorted(cuts)
    pieces = []
    for a, b in zip(cuts, cuts[1:]):
        if b - a <= _TIME_EPS:
            continue
        cell = assign_cell(sites, entity.position(0.5 * (a + b)))
        if pieces and pieces[-1][2] == cell:
            pieces[-1] = (pieces[-1][0], b, cell)
        else:
            pieces.append((a, b, cell))
    # glue out any slivers dropped above so the pieces stay contiguous
    fixed = []
    for a, b, c in pieces:
        if fixed:
            a = fixed[-1][1]
        fixed.append((a, b, c))
    if fixed:
        fixed[0] = (start, fixed[0][1], fixed[0][2])
        fixed[-1] = (fixed[-1][0], end, fixed[-1][2])
    return fixed


@dataclass
class ActivityTrace:
    """Event-level view of a simulated activity, used for bookkeeping."""

    events: list  # (t, entity_id, profile, from_cell, to_cell); None = uncovered, "-" = inactive
    snapshots: list  # (t, {cell: total}, uncovered, active)
    timelines: dict  # entity_id -> [(t0, t1, cell)]
    handovers: dict  # cell -> count of handovers in or out


_INACTIVE = "-"


def trace_activity(sites, entities, horizon) -> ActivityTrace:
    timelines = {e.entity_id: entity_timeline(sites, e, horizon) for e in entities}
    profile = {e.entity_id: e.profile for e in entities}
    events = []
    for eid in sorted(timelines):
        prev = _INACTIVE
        last_end = None
        for t0, t1, cell in timelines[eid]:
            if last_end is not None and t0 > last_end:
                events.append((last_end, eid, profile[eid], prev, _INACTIVE))
                prev = _INACTIVE
            if cell != prev:
                events.append((t0, eid, profile[eid], prev, cell))
            prev, last_end = cell, t1
        if last_end is not None and last_end < horizon:
            events.append((last_end, eid, profile[eid], prev, _INACTIVE))
    events.sort(key=lambda e: (e[0], e[1]))

    totals = defaultdict(int)
    uncovered = active = 0
    handovers = defaultdict(int)
    snapshots = []
    i = 0
    while i < len(events):
        t = events[i][0]
        while i < len(events) and events[i][0] == t:
            _, _, _, src, dst = events[i]
            if src == _INACTIVE:
                active += 1
            elif src is None:
                uncovered -= 1
            else:
                totals[src] -= 1
            if dst == _INACTIVE:
                active -= 1
            elif dst is None:
                uncovered += 1
            else:
                totals[dst] += 1
            if src not in (None, _INACTIVE) and dst not in (None, _INACTIVE):
                handovers[src] += 1
                handovers[dst] += 1
            i += 1
        snapshots.append((t, dict(totals), uncovered, active))
    return ActivityTrace(events, snapshots, timelines, dict(handovers))


def simulate_activity(sites, entities, horizon, hysteresis=1) -> list[ConditionInterval]:
    """Per-cell intervals of constant conditions over ``[0, horizon)``.

    A cell's current interval is closed when any of its per-profile counts
    has moved by at least ``hysteresis`` from the counts the interval opened
    with; each interval reports those opening counts. Cells that never host
    a device produce no intervals. Output is sorted by ``(cell_id, t0)``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if hysteresis < 1:
        raise ValueError("hysteresis must be >= 1")
    ids = [s.cell_id for s in sites]
    if len(set(ids)) != len(ids):
        raise ValueError("cell ids must be unique")
    trace = trace_activity(sites, entities, horizon)
    profiles = sorted({e.profile for e in entities})
    counts = {c: dict.fromkeys(profiles, 0) for c in ids}
    opened = {c: (0.0, dict.fromkeys(profiles, 0)) for c in ids}
    occupied = set()
    out = defaultdict(list)

    events = trace.events
    i = 0
    while i < len(events):
        t = events[i][0]
        touched = set()
        while i < len(events) and events[i][0] == t:
            _, _, prof, src, dst = events[i]
            if src not in (None, _INACTIVE):
                counts[src][prof] -= 1
                touched.add(src)
            if dst not in (None, _INACTIVE):
                counts[dst][prof] += 1
                touched.add(dst)
                occupied.add(dst)
            i += 1
        for c in sorted(touched):
            t_open, ref = opened[c]
            if t == t_open:
                opened[c] = (t, dict(counts[c]))
            elif max(abs(counts[c][p] - ref[p]) for p in profiles) >= hysteresis:
                out[c].append(ConditionInterval(c, t_open, t, ref))
                opened[c] = (t, dict(counts[c]))
    for c in ids:
        if c in occupied:
            t_open, ref = opened[c]
            out[c].append(ConditionInterval(c, t_open, float(horizon), ref))
    return [iv for c in sorted(out) for iv in out[c]]


def coverage_gap_time(sites, entities, horizon):
    """Entity-seconds spent active but outside every cell."""
    return sum(b - a for e in entities for a, b, c in entity_timeline(sites, e, horizon) if c is None)


# ---------------------------------------------------------------------------
# validation of the activity model

@dataclass
class ActivityStats:
    interval_lengths: np.ndarray
    change_rate: dict  # cell -> interval boundaries per second
    occupancy: dict  # total devices -> fraction of cell-time
    horizon: float

    @property
    def mean_interval_length(self):
        return float(np.mean(self.interval_lengths)) if len(self.interval_lengths) else 0.0

    @property
    def mean_occupancy(self):
        return float(sum(k * v for k, v in self.occupancy.items()))

    @property
    def mean_change_rate(self):
        return float(np.mean(list(self.change_rate.values()))) if self.change_rate else 0.0


def activity_stats(intervals) -> ActivityStats:
    if not intervals:
        raise ValueError("no intervals")
    lengths = np.array([iv.length for iv in intervals])
    horizon = max(iv.t1 for iv in intervals)
    per_cell = defaultdict(int)
    occ = defaultdict(float)
    for iv in intervals:
        per_cell[iv.cell_id] += 1
        occ[iv.total] += iv.length
    total = sum(occ.values())
    return ActivityStats(
        lengths,
        {c: (n - 1) / horizon for c, n in sorted(per_cell.items())},
        {k: v / total for k, v in sorted(occ.items())},
        horizon,
    )


def _discrete_ks(p, q):
    keys = sorted(set(p) | set(q))
    fp = np.cumsum([p.get(k, 0.0) for k in keys])
    fq = np.cumsum([q.get(k, 0.0) for k in keys])
    return float(np.max(np.abs(fp - fq))) if keys else 0.0


def _relerr(a, b):
    if b == 0:
        return 0.0 if a == 0 else math.inf
    return abs(a - b) / abs(b)


def validate_activity(intervals, reference: ActivityStats | None = None, tol_ks=0.05, tol_mean=0.10) -> dict:
    """Compare simulated interval statistics against reference statistics.

    Returns a report with the descriptive statistics and, when a reference
    is given, one ``{value, tolerance, pass}`` entry per metric.
    """
    from .distfit import ks_distance

    stats = activity_stats(intervals)
    report = {
        "descriptive": {
            "intervals": len(stats.interval_lengths),
            "mean_interval_length": stats.mean_interval_length,
            "mean_change_rate": stats.mean_change_rate,
            "mean_occupancy": stats.mean_occupancy,
            "change_rate": stats.change_rate,
            "occupancy": {str(k): v for k, v in stats.occupancy.items()},
        },
        "metrics": {},
    }
    if reference is None:
        return report
    m = report["metrics"]
    if len(reference.interval_lengths):
        m["interval_length_ks"] = (ks_distance(stats.interval_lengths, reference.interval_lengths), tol_ks)
    m["occupancy_ks"] = (_discrete_ks(stats.occupancy, reference.occupancy), tol_ks)
    m["interval_length_mean_relerr"] = (_relerr(stats.mean_interval_length, reference.mean_interval_length), tol_mean)
    m["occupancy_mean_relerr"] = (_relerr(stats.mean_occupancy, reference.mean_occupancy), tol_mean)
    m["change_rate_mean_relerr"] = (_relerr(stats.mean_change_rate, reference.mean_change_rate), tol_mean)
    report["metrics"] = {k: {"value": v, "tolerance": tol, "pass": bool(v <= tol)} for k, (v, tol) in m.items()}
    report["pass"] = all(x["pass"] for x in report["metrics"].values())
    return report


# ---------------------------------------------------------------------------
# persistence

def _fmt_counts(counts):
    return "{" + ",".join(f"{p}:{n}" for p, n in sorted(counts.items())) + "}"


def _parse_counts(text):
    text = text.strip()
    if not (text.startswith("{") and text.endswith("}")):
        raise ValueError(f"bad counts field {text!r}")
    body = text[1:-1].strip()
    out = {}
    if body:
        for item in body.split(","):
            p, _, n = item.partition(":")
            out[p.strip()] = int(n)
    return out


def write_intervals(intervals, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for iv in intervals:
            w.writerow([iv.cell_id, repr(float(iv.t0)), repr(float(iv.t1)), _fmt_counts(iv.counts)])


def read_intervals(path) -> list[ConditionInterval]:
    with open(path, newline="") as fh:
        return [ConditionInterval(c, float(a), float(b), _parse_counts(n)) for c, a, b, n in csv.reader(fh)]
