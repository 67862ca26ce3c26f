import math

import numpy as np
import pytest

from itslake import handover
from itslake.handover import EnbSite, RouteReading, UncoveredReadingError
from itslake.lakecore import DataLake, ObjectNotFound
from oracles import min_handovers_dp, min_handovers_exhaustive


def line_route(xs):
    return [RouteReading(i, float(i), float(x), 0.0) for i, x in enumerate(xs)]


def interval_instance(spans, n):
    """Sites on the x-axis covering exactly the given inclusive index spans."""
    route = line_route(range(n))
    sites = [EnbSite(sid, (a + b) / 2, 0.0, (b - a) / 2 + 0.25) for sid, (a, b) in spans.items()]
    return route, sites


def options_for(route, sites):
    return [
        [s.id for s in sites if math.hypot(r.x - s.x, r.y - s.y) <= s.range]
        for r in route
    ]


def random_instance(rng, max_readings=12, max_sites=5):
    while True:
        n = int(rng.integers(1, max_readings + 1))
        m = int(rng.integers(1, max_sites + 1))
        steps = rng.normal(0, 30, (n, 2)) + [25, 10]
        xy = np.cumsum(steps, axis=0)
        route = [RouteReading(i, float(i), float(x), float(y)) for i, (x, y) in enumerate(xy)]
        lo, hi = xy.min(0) - 20, xy.max(0) + 20
        ids = rng.choice(30, m, replace=False)
        sites = [
            EnbSite(int(ids[j]), *map(float, rng.uniform(lo, hi)), float(rng.uniform(40, 160)))
            for j in range(m)
        ]
        if all(options_for(route, sites)):
            return route, sites


def test_single_site_constant_trace():
    route = line_route(range(10))
    sites = [EnbSite(4, 5, 0, 100)]
    trace = handover.allocate_nearest(route, sites)
    assert trace == [4] * 10
    assert handover.handover_sequence(trace).handover_count == 0


def test_nearest_tie_goes_to_smaller_id():
    route = line_route([0])
    sites = [EnbSite(7, -10, 0, 50), EnbSite(2, 10, 0, 50)]
    assert handover.allocate_nearest(route, sites) == [2]


def test_nearest_empty_sites_and_uncovered():
    route = line_route([0, 100])
    assert handover.allocate_nearest(route, []) == [None, None]
    assert handover.allocate_nearest(route, [EnbSite(1, 0, 0, 10)]) == [1, None]


@pytest.mark.parametrize("seed", range(10))
def test_nearest_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    route = [RouteReading(i, float(i), *map(float, rng.uniform(0, 1000, 2))) for i in range(30)]
    sites = [EnbSite(i, *map(float, rng.uniform(0, 1000, 2)), float(rng.uniform(100, 400))) for i in range(8)]
    trace = handover.allocate_nearest(route, sites)
    for r, got in zip(route, trace):
        best = None
        for s in sorted(sites, key=lambda s: s.id):
            d = math.hypot(r.x - s.x, r.y - s.y)
            if d <= s.range and (best is None or d < best[0]):
                best = (d, s.id)
        assert got == (None if best is None else best[1])


@pytest.mark.parametrize("seed", range(10))
def test_hysteresis_zero_margin_equals_nearest(seed):
    route, sites = handover.generate_grid_scenario(4, 4, 300, 80, 40, seed)
    assert handover.allocate_hysteresis(route, sites, 0.0) == handover.allocate_nearest(route, sites)


def test_hysteresis_huge_margin_sticks():
    route = line_route(range(0, 100, 10))
    sites = [EnbSite(1, 0, 0, 500), EnbSite(2, 90, 0, 500)]
    assert handover.allocate_hysteresis(route, sites, 1e6) == [1] * 10
    with pytest.raises(ValueError):
        handover.allocate_hysteresis(route, sites, -1)


@pytest.mark.parametrize("seed", range(12))
def test_hysteresis_never_adds_handovers_on_seeded_grids(seed):
    route, sites = handover.generate_grid_scenario(5, 5, 400, 200, 60, seed)
    near = handover.handover_sequence(handover.allocate_nearest(route, sites))
    hyst = handover.handover_sequence(handover.allocate_hysteresis(route, sites, 50.0))
    assert hyst.handover_count <= near.handover_count


def test_handover_sequence_examples():
    trace = [20, 20, 8, 25, 25, 5, 2, 3, 13, 19]
    s = handover.handover_sequence(trace)
    assert s.sequence == [20, 8, 25, 5, 2, 3, 13, 19] and s.handover_count == 7
    s = handover.handover_sequence([5, 5, 5, 5, 2, 2, 2, 2, 2, 2])
    assert s.dwell_fractions == {5: pytest.approx(0.4), 2: pytest.approx(0.6)}
    assert handover.handover_sequence([3] * 4).handover_count == 0
    gap = handover.handover_sequence([1, None, 1, 2])
    assert gap.sequence == [1, 2] and sum(gap.dwell_fractions.values()) == pytest.approx(0.75)


def test_minimize_two_sites():
    route, sites = interval_instance({0: (0, 4), 1: (3, 9)}, 10)
    s = handover.minimize_handovers(route, sites)
    assert s.sequence == [0, 1] and s.handover_count == 1
    assert s.handover_count == min_handovers_exhaustive(options_for(route, sites))


def test_minimize_prefers_furthest_reach():
    # A [0..3], B [2..6], C [5..9], D [0..6]
    route, sites = interval_instance({1: (0, 3), 2: (2, 6), 3: (5, 9), 4: (0, 6)}, 10)
    s = handover.minimize_handovers(route, sites)
    assert s.sequence == [4, 3] and s.handover_count == 1
    assert min_handovers_exhaustive(options_for(route, sites)) == 1


def test_minimize_uncovered_reports_index():
    route = line_route([0, 10, 500, 20])
    with pytest.raises(UncoveredReadingError) as err:
        handover.minimize_handovers(route, [EnbSite(1, 0, 0, 50)])
    assert err.value.index == 2


def test_non_contiguous_coverage():
    # site 2 covers the whole stretch; sites 1 and 3 only the ends
    route = line_route([0, 10, 50, 60, 100, 110])
    sites = [EnbSite(1, 5, 0, 6), EnbSite(3, 105, 0, 6), EnbSite(2, 55, 0, 60)]
    s = handover.minimize_handovers(route, sites)
    assert s.handover_count == min_handovers_exhaustive(options_for(route, sites))


def test_corridor_fixture():
    route, sites = handover.corridor_fixture()
    near = handover.handover_sequence(handover.allocate_nearest(route, sites))
    assert near.sequence == [20, 8, 25, 5, 2, 3, 13, 19] and near.handover_count == 7
    best = handover.minimize_handovers(route, sites)
    assert best.sequence == [20, 8, 5, 2, 13, 19] and best.handover_count == 5
    assert best.line() == "handovers=5;sequence=20->8->5->2->13->19"
    assert best.handover_count == min_handovers_dp(options_for(route, sites))
    handover.check_trace(route, sites, best.trace)
    assert sum(best.dwell_fractions.values()) == pytest.approx(1.0)


def _no_segment_removable(route, sites, summary):
    """Dropping any segment and stretching its neighbours never keeps coverage."""
    cov = {s.id: [math.hypot(r.x - s.x, r.y - s.y) <= s.range for r in route] for s in sites}
    trace = summary.trace
    segs = []  # [site, first, last]
    for i, site in enumerate(trace):
        if segs and segs[-1][0] == site:
            segs[-1][2] = i
        else:
            segs.append([site, i, i])
    if len(segs) < 2:
        return
    for j, (_, first, last) in enumerate(segs):
        left = segs[j - 1] if j > 0 else None
        right = segs[j + 1] if j + 1 < len(segs) else None
        if left is None:
            removable = all(cov[right[0]][first:right[2] + 1])
        elif right is None:
            removable = all(cov[left[0]][left[1]:last + 1])
        else:
            removable = any(
                all(cov[left[0]][left[1]:split + 1]) and all(cov[right[0]][split + 1:right[2] + 1])
                for split in range(first - 1, last + 1)
            )
        assert not removable, f"segment {j} of {summary.sequence} is removable"


@pytest.mark.parametrize("seed", range(60))
def test_minimize_optimal_on_small_instances(seed):
    rng = np.random.default_rng(seed)
    route, sites = random_instance(rng)
    opts = options_for(route, sites)
    s = handover.minimize_handovers(route, sites)
    assert s.handover_count == min_handovers_exhaustive(opts) == min_handovers_dp(opts)
    handover.check_trace(route, sites, s.trace)
    assert s.handover_count <= handover.handover_sequence(handover.allocate_nearest(route, sites)).handover_count
    assert s.handover_count <= handover.handover_sequence(
        handover.allocate_hysteresis(route, sites, 20.0)).handover_count
    assert sum(s.dwell_fractions.values()) == pytest.approx(1.0)
    _no_segment_removable(route, sites, s)


def test_grid_generator_is_fully_covered():
    route, sites = handover.generate_grid_scenario(seed=7)
    assert len(sites) == 25
    assert all(options_for(route, sites))
    handover.minimize_handovers(route, sites)  # raises if any reading uncovered


def test_route_validation():
    with pytest.raises(ValueError):
        handover.allocate_nearest([RouteReading(1, 0.0, 0, 0)], [EnbSite(1, 0, 0, 1)])
    with pytest.raises(ValueError):
        handover.allocate_nearest(
            [RouteReading(0, 1.0, 0, 0), RouteReading(1, 1.0, 0, 0)], [EnbSite(1, 0, 0, 1)]
        )


def test_plan_store_and_recall():
    lake = DataLake()
    route, sites = handover.corridor_fixture()
    best = handover.minimize_handovers(route, sites)
    oid = handover.store_plan("commute", best, lake, t=1.0)
    before = len(lake.get(oid).access_history)
    got = handover.plan_from_history("commute", lake, t=2.0)
    assert got.sequence == best.sequence and got.trace == best.trace
    handover.plan_from_history("commute", lake, t=3.0)
    assert len(lake.get(oid).access_history) == before + 2
    with pytest.raises(ObjectNotFound):
        handover.plan_from_history("elsewhere", lake)


def test_csv_roundtrip(tmp_path):
    route, sites = handover.generate_grid_scenario(3, 3, 200, 20, 5, 1)
    with open(tmp_path / "r.csv", "w", newline="") as fh:
        handover.write_route(route, fh)
    with open(tmp_path / "s.csv", "w", newline="") as fh:
        handover.write_sites(sites, fh)
    assert handover.read_route(tmp_path / "r.csv") == route
    assert handover.read_sites(tmp_path / "s.csv") == sites
