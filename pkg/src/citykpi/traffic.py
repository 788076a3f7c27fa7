"""Traffic profiles and packet-time generation.

Three regimes are supported: Poisson arrivals, periodic generation with all
devices sharing the epoch grid ``k / rate`` (synchronous), and periodic
generation with a uniform random phase per device (asynchronous).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

_EPS = 1e-9


class Regime(str, enum.Enum):
    POISSON = "Poisson"
    PERIODIC_SYNC = "PeriodicSync"
    PERIODIC_ASYNC = "PeriodicAsync"


@dataclass(frozen=True)
class TrafficProfile:
    name: str
    packet_rate: float
    packet_size: int
    regime: Regime = Regime.POISSON

    def __post_init__(self):
        if self.packet_rate <= 0:
            raise ValueError(f"profile {self.name!r}: packet_rate must be positive")
        if self.packet_size <= 0:
            raise ValueError(f"profile {self.name!r}: packet_size must be positive")
        object.__setattr__(self, "regime", Regime(self.regime))

    @property
    def bit_rate(self):
        return self.packet_rate * self.packet_size * 8.0


def _check_span(span):
    t0, t1 = span
    if not t1 >= t0:
        raise ValueError(f"invalid span [{t0}, {t1})")
    return float(t0), float(t1)


def _epoch(t, rate):
    # index of the first epoch k / rate that is >= t
    return math.ceil(t * rate - _EPS)


def _per_device_counts(device_count, profile, t0, t1, rng):
    rate = profile.packet_rate
    if profile.regime is Regime.POISSON:
        return rng.poisson(rate * (t1 - t0), size=device_count), None
    if profile.regime is Regime.PERIODIC_SYNC:
        n = max(_epoch(t1, rate) - _epoch(t0, rate), 0)
        return np.full(device_count, n, dtype=np.int64), None
    phases = rng.uniform(0.0, 1.0 / rate, size=device_count)
    counts = np.ceil((t1 - phases) * rate - _EPS) - np.ceil((t0 - phases) * rate - _EPS)
    return np.maximum(counts, 0).astype(np.int64), phases


def packet_count(device_count, profile: TrafficProfile, span, rng=None):
    """Number of packets ``device_count`` devices generate during ``span``.

    Periodic-sync counts are deterministic. Poisson and periodic-async counts
    consume ``rng`` exactly as :func:`generate_timestamps` does, so the two
    agree when given identically seeded generators.
    """
    t0, t1 = _check_span(span)
    if device_count <= 0 or t1 == t0:
        return 0
    if rng is None and profile.regime is not Regime.PERIODIC_SYNC:
        raise ValueError(f"{profile.regime.value} packet counts need a random generator")
    counts, _ = _per_device_counts(int(device_count), profile, t0, t1, rng)
    return int(counts.sum())


def generate_timestamps(device_count, profile: TrafficProfile, span, rng=None):
    """Packet creation times in ``[t0, t1)`` and the device slot of each.

    Returns ``(times, slots)`` sorted by time (ties by slot).
    """
    t0, t1 = _check_span(span)
    if device_count <= 0 or t1 == t0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    if rng is None and profile.regime is not Regime.PERIODIC_SYNC:
        raise ValueError(f"{profile.regime.value} timestamps need a random generator")
    rate = profile.packet_rate
    counts, phases = _per_device_counts(int(device_count), profile, t0, t1, rng)
    slots = np.repeat(np.arange(device_count, dtype=np.int64), counts)
    if profile.regime is Regime.POISSON:
        # given its count, a Poisson device's arrivals are iid uniform on the span
        times = rng.uniform(t0, t1, size=int(counts.sum()))
    else:
        offset = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        if phases is None:
            first = np.full(device_count, _epoch(t0, rate) / rate)
        else:
            first = phases + np.ceil((t0 - phases) * rate - _EPS) / rate
        times = np.repeat(first, counts) + offset / rate
    order = np.lexsort((slots, times))
    return times[order], slots[order]
