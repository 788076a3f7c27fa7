"""Detailed single-cell packet simulator and the parameter-sweep harness.

Devices are placed uniformly over the cell disc and stay put for the whole
run. Each device gets a LOS/NLOS state and a shadowing draw; every packet
gets its own small-scale fading draw. The uplink is shared by egalitarian
processor sharing among devices with a packet in service, each device
queues its own packets FIFO.
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import math
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import channel
from .channel import (
    AbModelParams,
    CiModelParams,
    DomainError,
    ExtraLossConfig,
    LinkState,
    RadioConfig,
)
from .traffic import generate_timestamps

log = logging.getLogger(__name__)

PACKET_COLUMNS = [
    "packet_id", "device_id", "profile", "created_at_s",
    "delay_ms", "dropped", "throughput_bps", "snr_db",
]


@dataclass(frozen=True)
class ChannelConfig:
    """Path-loss model selection plus the stochastic channel knobs."""

    model: str = "CI"
    ple_los: float = 2.1
    ple_nlos: float = 3.4
    sigma_los: float = 3.6
    sigma_nlos: float = 9.7
    d0: float = 1.0
    ab_los: AbModelParams | None = None
    ab_nlos: AbModelParams | None = None
    extra: ExtraLossConfig = field(default_factory=ExtraLossConfig)
    rice_k: float = 9.0
    d_los: float = 50.0

    def __post_init__(self):
        if self.model not in ("CI", "AB"):
            raise DomainError(f"unknown path loss model {self.model!r}")
        if self.model == "AB" and (self.ab_los is None or self.ab_nlos is None):
            raise DomainError("AB model needs ab_los and ab_nlos parameters")

    def sigma(self, state):
        if self.model == "AB":
            return (self.ab_los if state is LinkState.LOS else self.ab_nlos).sigma
        return self.sigma_los if state is LinkState.LOS else self.sigma_nlos

    def path_loss(self, state, distance, frequency, shadowing=0.0):
        los = state is LinkState.LOS
        if self.model == "AB":
            loss = channel.ab_path_loss(self.ab_los if los else self.ab_nlos, distance, shadowing)
        else:
            params = CiModelParams.anchored(
                frequency, self.ple_los if los else self.ple_nlos, self.sigma(state), self.d0
            )
            loss = channel.ci_path_loss(params, distance, shadowing)
        return loss + channel.extra_losses(self.extra, distance)


@dataclass(frozen=True)
class CellConditions:
    device_counts: dict
    profiles: dict
    cell_radius: float = 200.0
    radio: RadioConfig = field(default_factory=RadioConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    los_fraction: float | None = None
    fixed_distance: float | None = None
    min_distance: float = 1.0
    outage_threshold: float = -5.0
    delay_budget: float = 1.0
    max_spectral_efficiency: float = 7.4

    def __post_init__(self):
        for name, count in self.device_counts.items():
            if count < 0:
                raise DomainError(f"negative device count for {name!r}")
            if name not in self.profiles:
                raise DomainError(f"no traffic profile named {name!r}")
        if self.cell_radius <= self.min_distance:
            raise DomainError("cell_radius must exceed min_distance")
        if self.los_fraction is not None and not 0 <= self.los_fraction <= 1:
            raise DomainError("los_fraction must lie in [0, 1]")

    @property
    def total_devices(self):
        return sum(self.device_counts.values())


class PacketRecord(NamedTuple):
    packet_id: int
    device_id: int
    profile: str
    created_at: float
    delay: float  # ms, nan when dropped
    dropped: bool
    attained_throughput: float  # bit/s, 0 when dropped
    snr_at_tx: float


def condition_features(cond: CellConditions) -> dict:
    """Numeric description of a cell condition used as regression input."""
    feats = {
        "devices": float(cond.total_devices),
        "radius": float(cond.cell_radius),
        "load_bps": float(sum(c * cond.profiles[p].bit_rate for p, c in cond.device_counts.items())),
    }
    for name, prof in cond.profiles.items():
        feats[f"devices.{name}"] = float(cond.device_counts.get(name, 0))
        feats[f"rate.{name}"] = float(prof.packet_rate)
    if cond.los_fraction is not None:
        feats["los_fraction"] = float(cond.los_fraction)
    return feats


def _only_profile(cond, axis):
    if len(cond.profiles) != 1:
        raise DomainError(f"axis {axis!r} is ambiguous with several profiles; use '{axis}.<profile>'")
    return next(iter(cond.profiles))


def apply_axis(cond: CellConditions, axis: str, value) -> CellConditions:
    """Return ``cond`` with one sweep dimension set to ``value``."""
    base, _, target = axis.partition(".")
    if base == "devices":
        name = target or _only_profile(cond, axis)
        if float(value) != int(value):
            raise DomainError(f"device count must be integral, got {value!r}")
        counts = dict(cond.device_counts)
        counts[name] = int(value)
        return dataclasses.replace(cond, device_counts=counts)
    if base == "rate":
        name = target or _only_profile(cond, axis)
        profiles = dict(cond.profiles)
        profiles[name] = dataclasses.replace(profiles[name], packet_rate=float(value))
        return dataclasses.replace(cond, profiles=profiles)
    if axis == "radius":
        return dataclasses.replace(cond, cell_radius=float(value))
    if axis == "los_fraction":
        return dataclasses.replace(cond, los_fraction=float(value))
    if axis == "tx_power":
        return dataclasses.replace(cond, radio=dataclasses.replace(cond.radio, tx_power=float(value)))
    raise DomainError(f"unknown sweep axis {axis!r}")


def canonical_axis(cond: CellConditions, axis: str) -> str:
    if axis in ("devices", "rate"):
        return f"{axis}.{_only_profile(cond, axis)}"
    return axis


def _rngs(seed, n):
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def run_cell(conditions: CellConditions, duration: float, seed: int) -> list[PacketRecord]:
    """Simulate one cell for ``duration`` seconds and return every packet.

    Queues are drained after ``duration`` so that each generated packet is
    either delivered or dropped.
    """
    if not duration > 0:
        raise DomainError("duration must be positive")
    cond = conditions
    place_rng, chan_rng, traffic_rng, fade_rng = _rngs(seed, 4)

    names = sorted(p for p, c in cond.device_counts.items() if c > 0)
    dev_profile = [p for p in names for _ in range(cond.device_counts[p])]
    n_dev = len(dev_profile)
    if n_dev == 0:
        return []

    radio = cond.radio
    if cond.fixed_distance is not None:
        ground = np.full(n_dev, float(cond.fixed_distance))
    else:
        lo, hi = cond.min_distance**2, cond.cell_radius**2
        ground = np.sqrt(lo + place_rng.uniform(size=n_dev) * (hi - lo))
    dist = np.hypot(ground, radio.rx_height - radio.tx_height)
    p_los = (
        np.full(n_dev, cond.los_fraction)
        if cond.los_fraction is not None
        else channel.los_probability(dist, cond.channel.d_los)
    )
    los = chan_rng.uniform(size=n_dev) < p_los
    states = [LinkState.LOS if x else LinkState.NLOS for x in los]
    shadow = np.array([chan_rng.normal(0.0, cond.channel.sigma(s)) if cond.channel.sigma(s) > 0 else 0.0
                       for s in states])
    path_loss = np.array([
        cond.channel.path_loss(s, d, radio.carrier_frequency, x) for s, d, x in zip(states, dist, shadow)
    ])
    mean_snr = channel.link_snr(radio, path_loss)

    created, device = [], []
    offset = 0
    for name in names:
        count = cond.device_counts[name]
        t, slot = generate_timestamps(count, cond.profiles[name], (0.0, duration), traffic_rng)
        created.append(t)
        device.append(slot + offset)
        offset += count
    created = np.concatenate(created)
    device = np.concatenate(device)
    order = np.lexsort((device, created))
    created, device = created[order], device[order]
    n_pkt = len(created)

    rayleigh = channel.sample_fading(LinkState.NLOS, 0.0, fade_rng, size=n_pkt)
    rician = channel.sample_fading(LinkState.LOS, cond.channel.rice_k, fade_rng, size=n_pkt)
    fading = np.where(los[device], rician, rayleigh)
    snr = mean_snr[device] + fading
    bw = radio.bandwidth
    rate = np.minimum(bw * np.log2(1.0 + 10.0 ** (snr / 10.0)), bw * cond.max_spectral_efficiency)
    bits = np.array([cond.profiles[dev_profile[d]].packet_size * 8.0 for d in device])

    delay = np.full(n_pkt, np.nan)
    dropped = np.zeros(n_pkt, dtype=bool)
    thr = np.zeros(n_pkt)

    created_l, rate_l, bits_l, snr_l = created.tolist(), rate.tolist(), bits.tolist(), snr.tolist()
    budget, threshold = cond.delay_budget, cond.outage_threshold
    queues = [deque() for _ in range(n_dev)]
    active = {}  # device -> [packet, remaining bits, service start]

    def start_next(d, now):
        q = queues[d]
        while q:
            i = q.popleft()
            if now - created_l[i] > budget or snr_l[i] < threshold:
                dropped[i] = True
                continue
            active[d] = [i, bits_l[i], now]
            return

    now = 0.0
    nxt = 0
    dev_l = device.tolist()
    while nxt < n_pkt or active:
        k = len(active)
        t_done, d_done = math.inf, -1
        for d, (i, rem, _) in active.items():
            t = rem * k / rate_l[i]
            if t < t_done:
                t_done, d_done = t, d
        t_arr = created_l[nxt] - now if nxt < n_pkt else math.inf
        step = min(t_arr, t_done)
        if k:
            for job in active.values():
                job[1] -= rate_l[job[0]] / k * step
        now += step
        if t_arr <= t_done:
            i = nxt
            nxt += 1
            d = dev_l[i]
            queues[d].append(i)
            if d not in active:
                start_next(d, now)
        else:
            i, _, start = active.pop(d_done)
            delay[i] = (now - created_l[i]) * 1e3
            thr[i] = bits_l[i] / (now - start)
            start_next(d_done, now)

    return [
        PacketRecord(j, int(dev_l[j]), dev_profile[dev_l[j]], created_l[j], float(delay[j]),
                     bool(dropped[j]), float(thr[j]), snr_l[j])
        for j in range(n_pkt)
    ]


# ---------------------------------------------------------------------------
# sweep

@dataclass(frozen=True)
class SweepGrid:
    base: CellConditions
    axes: tuple  # ((axis name, (values...)), ...)
    replications: int = 1
    seed_base: int = 0

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple((a, tuple(v)) for a, v in self.axes))
        for axis, values in self.axes:
            if not values:
                raise DomainError(f"sweep axis {axis!r} has no values")
        if self.replications < 1:
            raise DomainError("replications must be >= 1")

    def points(self):
        """Grid points as ``{axis: value}`` dicts in row-major order."""
        names = [canonical_axis(self.base, a) for a, _ in self.axes]
        return [dict(zip(names, combo)) for combo in itertools.product(*(v for _, v in self.axes))]

    def conditions(self, point) -> CellConditions:
        cond = self.base
        for axis, value in point.items():
            cond = apply_axis(cond, axis, value)
        return cond


def point_seed(seed_base, point_index, replication):
    ss = np.random.SeedSequence([seed_base, point_index, replication])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class SweepPoint:
    index: int
    point: dict
    runs: list  # one list of PacketRecord per replication
    error: str | None = None

    @property
    def records(self):
        return [r for run in self.runs for r in run]


def _run_point(args):
    grid, index, point, duration = args
    try:
        cond = grid.conditions(point)
        runs = [run_cell(cond, duration, point_seed(grid.seed_base, index, r)) for r in range(grid.replications)]
        return SweepPoint(index, point, runs)
    except Exception as exc:  # recorded per point, the sweep carries on
        return SweepPoint(index, point, [], error=f"{type(exc).__name__}: {exc}")


def run_sweep(grid: SweepGrid, duration: float, workers: int = 1) -> list[SweepPoint]:
    """Run every grid point x replication; results come back in grid order."""
    jobs = [(grid, i, p, duration) for i, p in enumerate(grid.points())]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]
    for res in results:
        if res.error:
            log.warning("sweep point %d %s failed: %s", res.index, res.point, res.error)
    return results


# ---------------------------------------------------------------------------
# persistence

def _fmt(x):
    return repr(float(x))


def write_packet_csv(fh, records):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(PACKET_COLUMNS)
    for r in records:
        w.writerow([r.packet_id, r.device_id, r.profile, _fmt(r.created_at), _fmt(r.delay),
                    int(r.dropped), _fmt(r.attained_throughput), _fmt(r.snr_at_tx)])


def read_packet_rows(lines):
    rows = csv.reader(lines)
    header = next(rows)
    if header != PACKET_COLUMNS:
        raise ValueError(f"unexpected packet columns {header}")
    return [
        PacketRecord(int(a), int(b), c, float(d), float(e), f == "1", float(g), float(h))
        for a, b, c, d, e, f, g, h in rows
    ]


def write_sweep(points: list[SweepPoint], out_dir) -> list[Path]:
    """One CSV per grid point plus ``index.csv``; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    with open(out / "index.csv", "w", newline="") as idx:
        w = csv.writer(idx, lineterminator="\n")
        w.writerow(["index", "file", "point", "status"])
        for p in points:
            name = f"point_{p.index:04d}.csv"
            header = {"index": p.index, "point": p.point, "replications": [len(r) for r in p.runs]}
            if p.error:
                header["error"] = p.error
            with open(out / name, "w", newline="") as fh:
                fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
                write_packet_csv(fh, p.records)
            written.append(out / name)
            w.writerow([p.index, name, json.dumps(p.point, sort_keys=True), "error" if p.error else "ok"])
    written.insert(0, out / "index.csv")
    return written


def read_sweep(sweep_dir) -> list[SweepPoint]:
    src = Path(sweep_dir)
    points = []
    with open(src / "index.csv", newline="") as idx:
        for row in csv.DictReader(idx):
            with open(src / row["file"], newline="") as fh:
                first = fh.readline()
                if not first.startswith("# "):
                    raise ValueError(f"{row['file']}: missing header record")
                header = json.loads(first[2:])
                records = read_packet_rows(fh)
            runs, start = [], 0
            for size in header["replications"]:
                runs.append(records[start:start + size])
                start += size
            points.append(SweepPoint(header["index"], header["point"], runs, header.get("error")))
    return points


def kpi_samples(records):
    """Split packet records into ``{"delay", "throughput", "drop"}`` arrays."""
    dropped = np.array([r.dropped for r in records], dtype=float)
    ok = dropped == 0
    delay = np.array([r.delay for r in records])[ok] if records else np.empty(0)
    thr = np.array([r.attained_throughput for r in records])[ok] if records else np.empty(0)
    return {"delay": delay, "throughput": thr, "drop": dropped}


def default_workers():
    return max(1, (os.cpu_count() or 1))
