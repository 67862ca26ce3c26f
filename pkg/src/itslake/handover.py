"""eNB allocation along a UE route and handover minimisation.

Coverage is a disc: a site covers a reading when their distance is at most
the site's range. Two allocation models are provided (nearest site, and
nearest with hysteresis), plus a planner that picks the fewest-handover
allocation given the whole route in advance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .lakecore import DataLake, ObjectNotFound, Zone
from .rng import make_rng


class UncoveredReadingError(ValueError):
    def __init__(self, index: int):
        super().__init__(f"route reading {index} is not covered by any site")
        self.index = index


@dataclass(frozen=True)
class EnbSite:
    id: int
    x: float
    y: float
    range: float

    def __post_init__(self):
        if not self.range > 0:
            raise ValueError(f"site {self.id} needs a positive range")


@dataclass(frozen=True)
class RouteReading:
    index: int
    time: float
    x: float
    y: float


@dataclass
class HandoverSummary:
    sequence: list[int]
    handover_count: int
    dwell_fractions: dict[int, float]
    trace: list[int | None] = field(default_factory=list)

    def line(self) -> str:
        return f"handovers={self.handover_count};sequence={'->'.join(map(str, self.sequence))}"

    def to_json(self) -> str:
        return json.dumps({
            "sequence": self.sequence,
            "handover_count": self.handover_count,
            "dwell_fractions": {str(k): v for k, v in self.dwell_fractions.items()},
            "trace": self.trace,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "HandoverSummary":
        d = json.loads(text)
        return cls(
            d["sequence"],
            d["handover_count"],
            {int(k): v for k, v in d["dwell_fractions"].items()},
            d["trace"],
        )


def _check_route(route: Sequence[RouteReading]):
    for i, r in enumerate(route):
        if r.index != i:
            raise ValueError(f"route indices must be contiguous from 0 (got {r.index} at {i})")
    for a, b in zip(route, route[1:]):
        if not b.time > a.time:
            raise ValueError(f"route times must strictly increase (index {b.index})")


def _sorted_sites(sites: Iterable[EnbSite]) -> list[EnbSite]:
    sites = sorted(sites, key=lambda s: s.id)
    ids = [s.id for s in sites]
    if len(set(ids)) != len(ids):
        raise ValueError("site ids must be unique")
    return sites


def distance_matrix(route: Sequence[RouteReading], sites: Sequence[EnbSite]) -> np.ndarray:
    """Distances, shape (len(route), len(sites))."""
    if not route or not sites:
        return np.zeros((len(route), len(sites)))
    p = np.array([(r.x, r.y) for r in route], dtype=float)
    q = np.array([(s.x, s.y) for s in sites], dtype=float)
    return np.hypot(p[:, None, 0] - q[None, :, 0], p[:, None, 1] - q[None, :, 1])


def coverage_matrix(route, sites) -> np.ndarray:
    sites = _sorted_sites(sites)
    d = distance_matrix(route, sites)
    ranges = np.array([s.range for s in sites], dtype=float)
    return d <= ranges[None, :]


def allocate_nearest(route: Sequence[RouteReading], sites: Iterable[EnbSite]) -> list[int | None]:
    _check_route(route)
    sites = _sorted_sites(sites)
    if not sites:
        return [None] * len(route)
    d = distance_matrix(route, sites)
    ranges = np.array([s.range for s in sites])
    d = np.where(d <= ranges[None, :], d, np.inf)
    trace: list[int | None] = []
    for row in d:
        j = int(np.argmin(row))  # first minimum -> smallest id on ties
        trace.append(sites[j].id if math.isfinite(row[j]) else None)
    return trace


def allocate_hysteresis(
    route: Sequence[RouteReading], sites: Iterable[EnbSite], margin: float
) -> list[int | None]:
    """Stay on the serving site until another is closer by more than ``margin``.

    Candidates are compared on ``(distance + margin, id)`` against the serving
    site's ``(distance, id)``, so ``margin=0`` reproduces :func:`allocate_nearest`
    exactly, ties included.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    _check_route(route)
    sites = _sorted_sites(sites)
    if not sites:
        return [None] * len(route)
    d = distance_matrix(route, sites)
    ranges = np.array([s.range for s in sites])
    d = np.where(d <= ranges[None, :], d, np.inf)
    trace: list[int | None] = []
    current: int | None = None
    for row in d:
        j = int(np.argmin(row))
        if not math.isfinite(row[j]):
            current = None
        elif current is None or not math.isfinite(row[current]):
            current = j
        elif (row[j] + margin, j) < (row[current], current):
            current = j
        trace.append(None if current is None else sites[current].id)
    return trace


def handover_sequence(trace: Sequence[int | None]) -> HandoverSummary:
    """Collapse a per-reading trace; uncovered readings are skipped, not handovers."""
    seq: list[int] = []
    counts: dict[int, int] = {}
    for site in trace:
        if site is None:
            continue
        counts[site] = counts.get(site, 0) + 1
        if not seq or seq[-1] != site:
            seq.append(site)
    n = len(trace)
    dwell = {s: c / n for s, c in sorted(counts.items())}
    return HandoverSummary(seq, max(len(seq) - 1, 0), dwell, list(trace))


def coverage_intervals(route, sites) -> dict[int, list[tuple[int, int]]]:
    """Maximal contiguous index intervals (inclusive) covered by each site."""
    sites = _sorted_sites(sites)
    cov = coverage_matrix(route, sites)
    out = {}
    for j, s in enumerate(sites):
        spans = []
        start = None
        for i, c in enumerate(cov[:, j]):
            if c and start is None:
                start = i
            elif not c and start is not None:
                spans.append((start, i - 1))
                start = None
        if start is not None:
            spans.append((start, len(route) - 1))
        out[s.id] = spans
    return out


def minimize_handovers(route: Sequence[RouteReading], sites: Iterable[EnbSite]) -> HandoverSummary:
    """Fewest-handover allocation by furthest-reach interval covering.

    At each uncovered index the site whose contiguous coverage from there
    reaches furthest is chosen (smaller id on ties). This is the classic
    greedy for covering a line with the fewest intervals, so it is optimal.
    """
    _check_route(route)
    sites = _sorted_sites(sites)
    cov = coverage_matrix(route, sites)
    n = len(route)
    for i in range(n):
        if not cov[i].any():
            raise UncoveredReadingError(i)
    # reach[i, j]: last index of site j's contiguous coverage run through i
    reach = np.full(cov.shape, -1, dtype=int)
    for i in range(n - 1, -1, -1):
        nxt = reach[i + 1] if i + 1 < n else np.full(len(sites), -1)
        reach[i] = np.where(cov[i], np.where(nxt >= 0, nxt, i), -1)
    trace: list[int | None] = [None] * n
    i = 0
    while i < n:
        j = int(np.argmax(reach[i]))
        end = int(reach[i, j])
        trace[i:end + 1] = [sites[j].id] * (end - i + 1)
        i = end + 1
    return handover_sequence(trace)


def check_trace(route, sites, trace) -> None:
    """Raise AssertionError if an assignment does not cover its reading."""
    by_id = {s.id: s for s in sites}
    assert len(trace) == len(route)
    for r, s in zip(route, trace):
        if s is None:
            continue
        site = by_id[s]
        assert math.hypot(r.x - site.x, r.y - site.y) <= site.range, f"reading {r.index} not covered by {s}"


# -- lake integration -----------------------------------------------------------

PLAN_TRANSFORM = "minimize_handovers"


def store_plan(
    route_id: str,
    summary: HandoverSummary,
    lake: DataLake,
    parents: Sequence[int] = (),
    t: float = 0.0,
) -> int:
    """Store a minimised plan as an Insights entry tagged with ``route_id``."""
    payload = summary.to_json().encode()
    tags = {"route_id": route_id, "kind": "handover_plan"}
    if parents:
        entry = lake.derive(parents, PLAN_TRANSFORM, payload, zone=Zone.INSIGHTS, t=t, tags=tags)
    else:
        raw = lake.ingest(payload, f"its/ue/{route_id}/plan", tags=tags, t=t)
        entry = lake.derive([raw.object_id], PLAN_TRANSFORM, payload, zone=Zone.INSIGHTS, t=t, tags=tags)
    return entry.object_id


def plan_from_history(route_id: str, lake: DataLake, t: float | None = None) -> HandoverSummary:
    """Recall the latest stored plan for ``route_id`` and log the access."""
    hits = lake.query_catalog(zone=Zone.INSIGHTS, tags={"route_id": route_id, "kind": "handover_plan"})
    if not hits:
        raise ObjectNotFound(f"plan for route {route_id}")
    entry = hits[-1]
    if t is None:
        t = entry.access_history[-1]
    return HandoverSummary.from_json(lake.read(entry.object_id, t=t).decode())


# -- scenarios and CSV ------------------------------------------------------------

SITES_HEADER = ("id", "x", "y", "range")
ROUTE_HEADER = ("index", "t", "x", "y")
OUTPUT_HEADER = ("index", "enb_id")


def corridor_fixture() -> tuple[list[RouteReading], list[EnbSite]]:
    """Straight 760 m corridor with eight sites.

    Built so the nearest-site allocation visits 20, 8, 25, 5, 2, 3, 13, 19 and
    the minimal plan needs only 20, 8, 5, 2, 13, 19 (25 and 3 are dominated by
    the wider coverage of their neighbours). Geometry is synthetic.
    """
    layout = [  # id, x, range
        (20, 0.0, 60.5),
        (8, 100.0, 90.5),
        (25, 200.0, 60.5),
        (5, 300.0, 110.5),
        (2, 400.0, 60.5),
        (3, 500.0, 60.5),
        (13, 600.0, 130.5),
        (19, 700.0, 60.5),
    ]
    sites = [EnbSite(i, x, 0.0, r) for i, x, r in layout]
    route = [RouteReading(i, float(i), 10.0 * i, 0.0) for i in range(76)]
    return route, sites


def generate_grid_scenario(
    rows: int = 5,
    cols: int = 5,
    spacing: float = 400.0,
    n_readings: int = 200,
    noise: float = 20.0,
    seed: int = 0,
) -> tuple[list[RouteReading], list[EnbSite]]:
    """Grid of sites and a noisy diagonal route kept inside the grid.

    Range is ``0.75 * spacing`` (> spacing/sqrt(2)), so every point of the
    grid's bounding box is covered.
    """
    if rows < 1 or cols < 1 or spacing <= 0 or n_readings < 1 or noise < 0:
        raise ValueError("grid scenario parameters out of range")
    rng = make_rng(seed)
    sites = [
        EnbSite(r * cols + c, c * spacing, r * spacing, 0.75 * spacing)
        for r in range(rows) for c in range(cols)
    ]
    w, h = (cols - 1) * spacing, (rows - 1) * spacing
    s = np.linspace(0.0, 1.0, n_readings)
    xy = np.column_stack([s * w, s * h]) + rng.normal(0.0, noise, (n_readings, 2))
    xy[:, 0] = np.clip(xy[:, 0], 0.0, w)
    xy[:, 1] = np.clip(xy[:, 1], 0.0, h)
    route = [RouteReading(i, float(i), float(x), float(y)) for i, (x, y) in enumerate(xy)]
    return route, sites


def read_sites(path) -> list[EnbSite]:
    with open(path, newline="") as fh:
        return [
            EnbSite(int(r["id"]), float(r["x"]), float(r["y"]), float(r["range"]))
            for r in csv.DictReader(fh)
        ]


def read_route(path) -> list[RouteReading]:
    with open(path, newline="") as fh:
        return [
            RouteReading(int(r["index"]), float(r["t"]), float(r["x"]), float(r["y"]))
            for r in csv.DictReader(fh)
        ]


def write_sites(sites, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SITES_HEADER)
    for s in sorted(sites, key=lambda s: s.id):
        w.writerow((s.id, repr(s.x), repr(s.y), repr(s.range)))


def write_route(route, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(ROUTE_HEADER)
    for r in route:
        w.writerow((r.index, repr(r.time), repr(r.x), repr(r.y)))


def write_allocation(trace, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(OUTPUT_HEADER)
    for i, s in enumerate(trace):
        w.writerow((i, "" if s is None else s))
