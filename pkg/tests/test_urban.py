import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citykpi import urban
from citykpi.urban import CellSite, ConditionInterval, MobileEntity

TWO = [CellSite("A", (0.0, 0.0), 100.0), CellSite("B", (150.0, 0.0), 100.0)]


def test_assign_cell_rules():
    assert urban.assign_cell(TWO, (0.0, 0.0)) == "A"
    assert urban.assign_cell(TWO, (75.0, 10.0)) == "A"  # equidistant: lower id
    assert urban.assign_cell(TWO, (80.0, 0.0)) == "B"
    assert urban.assign_cell(TWO, (0.0, 500.0)) is None


def test_static_entities_one_interval_per_occupied_cell():
    ents = [MobileEntity(f"e{i}", "car", ((10.0 * i, 0.0, 0.0),)) for i in range(3)]
    ivs = urban.simulate_activity(TWO, ents, 60.0)
    assert ivs == [ConditionInterval("A", 0.0, 60.0, {"car": 3})]


def test_twenty_cars_for_five_seconds():
    ents = [MobileEntity(f"car{i}", "car", ((i, -i, 0.0),)) for i in range(20)]
    (iv,) = urban.simulate_activity(TWO, ents, 5.0)
    assert iv.counts == {"car": 20} and iv.length == 5.0


def test_crossing_splits_both_cells_at_the_same_instant():
    walker = MobileEntity("w", "ped", ((-50.0, 0.0, 0.0), (250.0, 0.0, 30.0)))
    parked = MobileEntity("p", "ped", ((0.0, 0.0, 0.0),))
    ivs = urban.simulate_activity(TWO, [walker, parked], 30.0)
    t_star = 12.5  # bisector x = 75 reached after 125 m at 10 m/s
    a = [iv for iv in ivs if iv.cell_id == "A"]
    b = [iv for iv in ivs if iv.cell_id == "B"]
    assert [(iv.t0, iv.t1, iv.total) for iv in a] == [(0.0, pytest.approx(t_star), 2), (pytest.approx(t_star), 30.0, 1)]
    assert b[0].total == 0 and b[1].total == 1 and b[1].t0 == a[1].t0
    # walker leaves B's disc at x = 250 exactly at t = 30
    assert b[-1].t1 == 30.0


def test_exact_disc_exit_time():
    ent = MobileEntity("e", "x", ((0.0, 0.0, 0.0), (300.0, 0.0, 3.0)))
    tl = urban.entity_timeline([CellSite("A", (0.0, 0.0), 100.0)], ent, 10.0)
    assert tl[0][2] == "A" and tl[0][1] == pytest.approx(1.0, abs=1e-12)
    assert tl[1][2] is None and tl[1][1] == 10.0


def test_active_window_and_coverage_gap():
    ent = MobileEntity("e", "x", ((500.0, 0.0, 0.0),), active_window=(10.0, 40.0))
    assert urban.entity_timeline(TWO, ent, 100.0) == [(10.0, 40.0, None)]
    assert urban.coverage_gap_time(TWO, [ent], 100.0) == 30.0
    assert urban.simulate_activity(TWO, [ent], 100.0) == []


def test_entity_validation():
    with pytest.raises(ValueError):
        MobileEntity("e", "x", ())
    with pytest.raises(ValueError):
        MobileEntity("e", "x", ((0, 0, 1.0), (1, 1, 1.0)))
    with pytest.raises(ValueError):
        CellSite("A", (0, 0), 0.0)
    with pytest.raises(ValueError):
        urban.simulate_activity(TWO, [], 10.0, hysteresis=0)
    with pytest.raises(ValueError):
        urban.simulate_activity(TWO + TWO[:1], [], 10.0)


# ---------------------------------------------------------------------------
# randomized scenarios


@st.composite
def scenarios(draw):
    n_sites = draw(st.integers(1, 4))
    sites = [
        CellSite(f"c{i}", (draw(st.floats(0, 400)), draw(st.floats(0, 400))), draw(st.floats(40, 220)))
        for i in range(n_sites)
    ]
    horizon = draw(st.floats(20.0, 200.0))
    entities = []
    for k in range(draw(st.integers(1, 10))):
        n_wp = draw(st.integers(1, 4))
        times = sorted(set(draw(st.lists(st.floats(0.0, 250.0), min_size=n_wp, max_size=n_wp))))
        route = tuple((draw(st.floats(-100, 500)), draw(st.floats(-100, 500)), t) for t in times)
        window = (-math.inf, math.inf)
        if draw(st.booleans()):
            a, b = sorted((draw(st.floats(0.0, 250.0)), draw(st.floats(0.0, 250.0))))
            window = (a, b)
        entities.append(MobileEntity(f"e{k}", draw(st.sampled_from(["bus", "car"])), route, window))
    return sites, entities, horizon, draw(st.integers(1, 3))


def true_counts(trace, cell, t):
    c = Counter()
    for eid, pieces in trace.timelines.items():
        for a, b, cid in pieces:
            if a <= t < b and cid == cell:
                c[eid] += 1
    return sum(c.values())


def check_urban_invariants(scn):
    sites, entities, horizon, h = scn
    ivs = urban.simulate_activity(sites, entities, horizon, hysteresis=h)
    trace = urban.trace_activity(sites, entities, horizon)

    # output order
    assert [(iv.cell_id, iv.t0) for iv in ivs] == sorted((iv.cell_id, iv.t0) for iv in ivs)

    # per-cell partition of [0, horizon)
    by_cell = {}
    for iv in ivs:
        by_cell.setdefault(iv.cell_id, []).append(iv)
    for cell, seq in by_cell.items():
        assert seq[0].t0 == 0.0 and seq[-1].t1 == horizon
        assert all(a.t1 == b.t0 for a, b in zip(seq, seq[1:]))
        assert all(iv.t1 > iv.t0 for iv in seq)
        # hysteresis: consecutive intervals differ by >= h in some profile
        for a, b in zip(seq, seq[1:]):
            assert max(abs(a.counts.get(p, 0) - b.counts.get(p, 0)) for p in set(a.counts) | set(b.counts)) >= h

    # device conservation at every event instant
    for t, totals, uncovered, active in trace.snapshots:
        assert all(v >= 0 for v in totals.values()) and uncovered >= 0
        assert sum(totals.values()) + uncovered == active
        assert active == sum(
            1 for e in entities
            if max(0.0, e.active_window[0]) <= t < min(horizon, e.active_window[1])
        )

    # handovers move a device between two cells in one event
    for t, eid, prof, src, dst in trace.events:
        assert src != dst

    # timelines tile each entity's active window
    for e in entities:
        tl = trace.timelines[e.entity_id]
        if tl:
            assert tl[0][0] == max(0.0, e.active_window[0])
            assert tl[-1][1] == min(horizon, e.active_window[1])
            assert all(a[1] == b[0] for a, b in zip(tl, tl[1:]))

    # with hysteresis 1 the interval counts are the true counts throughout
    if h == 1:
        for iv in ivs:
            for f in (0.25, 0.75):
                t = iv.t0 + f * (iv.t1 - iv.t0)
                assert true_counts(trace, iv.cell_id, t) == iv.total


@settings(max_examples=150, deadline=None)
@given(scenarios())
def test_urban_invariants(scn):
    check_urban_invariants(scn)


@settings(max_examples=40, deadline=None)
@given(scenarios())
def test_interval_file_roundtrip(tmp_path_factory, scn):
    sites, entities, horizon, h = scn
    ivs = urban.simulate_activity(sites, entities, horizon, h)
    path = tmp_path_factory.mktemp("iv") / "intervals.csv"
    urban.write_intervals(ivs, path)
    assert urban.read_intervals(path) == ivs


# ---------------------------------------------------------------------------
# activity validation


def corridor(n=12, speed=1.0):
    sites = [CellSite(f"c{i}", (200.0 * i, 0.0), 120.0) for i in range(5)]
    ents = []
    for k in range(n):
        y = 10.0 * (k % 5)
        ents.append(MobileEntity(f"e{k}", "car", ((-100.0 + 37 * k, y, 0.0), (900.0, y + 5, 400.0 + 13 * k))))
    return sites, [e.scaled(speed) for e in ents]


def test_validate_against_itself():
    sites, ents = corridor()
    ivs = urban.simulate_activity(sites, ents, 500.0)
    rep = urban.validate_activity(ivs, urban.activity_stats(ivs))
    assert rep["pass"]
    assert rep["metrics"]["interval_length_ks"]["value"] == 0.0
    assert rep["metrics"]["occupancy_ks"]["value"] == 0.0


def test_doubling_speed_halves_interval_length():
    sites, slow = corridor(speed=1.0)
    _, fast = corridor(speed=2.0)
    a = urban.activity_stats(urban.simulate_activity(sites, slow, 500.0))
    b = urban.activity_stats(urban.simulate_activity(sites, fast, 250.0))
    assert b.mean_interval_length == pytest.approx(0.5 * a.mean_interval_length, rel=0.05)


def test_impossible_occupancy_fails():
    sites, ents = corridor()
    ivs = urban.simulate_activity(sites, ents, 500.0)
    ref = urban.activity_stats(ivs)
    ref.occupancy = {1000: 1.0}
    rep = urban.validate_activity(ivs, ref)
    assert not rep["metrics"]["occupancy_mean_relerr"]["pass"]
    assert not rep["metrics"]["occupancy_ks"]["pass"]
    assert rep["metrics"]["interval_length_ks"]["pass"]
    assert not rep["pass"]


def test_validate_without_reference_is_descriptive():
    sites, ents = corridor()
    rep = urban.validate_activity(urban.simulate_activity(sites, ents, 500.0))
    assert rep["metrics"] == {} and rep["descriptive"]["intervals"] > 5
    occupancy = np.array(list(rep["descriptive"]["occupancy"].values()))
    assert occupancy.sum() == pytest.approx(1.0)
