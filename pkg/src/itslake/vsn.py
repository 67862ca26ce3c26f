"""Vehicular sensor network offloading.

Vehicles within D2D radius form a proximity graph. Aggregation points are
picked greedily by closeness centrality; each one absorbs every still
uncovered vehicle within ``k`` hops and uploads a single aggregated record.

The aggregation rate is the fraction of generated volume *eliminated*
before the cellular uplink: ``1 - uploaded / generated``.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .rng import make_rng

VehicleId = Hashable


@dataclass(frozen=True)
class Vehicle:
    vehicle_id: VehicleId
    x: float
    y: float
    volume: float = 1.0


@dataclass
class VehicleSnapshot:
    time: float
    vehicles: list[Vehicle]

    def __post_init__(self):
        ids = [v.vehicle_id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate vehicle ids in snapshot t={self.time}")
        for v in self.vehicles:
            if not (math.isfinite(v.x) and math.isfinite(v.y)):
                raise ValueError(f"non-finite position for vehicle {v.vehicle_id!r}")
            if v.volume < 0:
                raise ValueError(f"negative data volume for vehicle {v.vehicle_id!r}")

    def volumes(self) -> dict[VehicleId, float]:
        return {v.vehicle_id: v.volume for v in self.vehicles}


@dataclass
class ProximityGraph:
    nodes: list[VehicleId]
    adjacency: dict[VehicleId, set[VehicleId]]
    radius: float

    @property
    def edges(self) -> set[frozenset]:
        return {frozenset((u, v)) for u in self.adjacency for v in self.adjacency[u]}

    def neighbors(self, v: VehicleId) -> set[VehicleId]:
        return self.adjacency[v]

    @classmethod
    def from_edges(cls, nodes: Iterable[VehicleId], edges: Iterable[tuple], radius: float = 1.0):
        nodes = sorted(nodes)
        adj = {n: set() for n in nodes}
        for u, v in edges:
            if u == v:
                continue
            adj[u].add(v)
            adj[v].add(u)
        return cls(nodes, adj, radius)


@dataclass
class AggregationPlan:
    hops: int
    aggregation_points: list[VehicleId]
    assignment: dict[VehicleId, VehicleId]
    generated_volume: float
    uploaded_volume: float
    selection_order: list[VehicleId] = field(default_factory=list)

    def members(self, ap: VehicleId) -> list[VehicleId]:
        return sorted(v for v, a in self.assignment.items() if a == ap)


@dataclass(frozen=True)
class AggregationMetrics:
    aggregation_rate: float
    upload_cost: float


def build_proximity_graph(snapshot: VehicleSnapshot, radius: float) -> ProximityGraph:
    if radius <= 0:
        raise ValueError("radius must be positive")
    vs = sorted(snapshot.vehicles, key=lambda v: v.vehicle_id)
    ids = [v.vehicle_id for v in vs]
    adj: dict[VehicleId, set[VehicleId]] = {i: set() for i in ids}
    if len(vs) > 1:
        pos = np.array([(v.x, v.y) for v in vs], dtype=float)
        diff = pos[:, None, :] - pos[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        close = d2 <= radius * radius
        np.fill_diagonal(close, False)
        for i, j in zip(*np.nonzero(np.triu(close))):
            adj[ids[i]].add(ids[j])
            adj[ids[j]].add(ids[i])
    return ProximityGraph(ids, adj, radius)


def bfs_distances(graph: ProximityGraph, source: VehicleId, cutoff: int | None = None) -> dict:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        d = dist[u]
        if cutoff is not None and d >= cutoff:
            continue
        for w in graph.adjacency[u]:
            if w not in dist:
                dist[w] = d + 1
                queue.append(w)
    return dist


def closeness_centrality(graph: ProximityGraph) -> dict[VehicleId, float]:
    """Closeness with Wasserman-Faust scaling for disconnected graphs.

    For a node reaching ``r`` nodes (itself included) with total distance
    ``s``: ``(r-1)/s * (r-1)/(n-1)``. Isolated nodes score 0.
    """
    n = len(graph.nodes)
    scores = {}
    for v in graph.nodes:
        dist = bfs_distances(graph, v)
        total = sum(dist.values())
        reach = len(dist)
        if total == 0 or n < 2:
            scores[v] = 0.0
        else:
            scores[v] = (reach - 1) / total * (reach - 1) / (n - 1)
    return scores


def _default_record_size(member_volumes: Sequence[float], ap_volume: float) -> float:
    return ap_volume


def _plan_volumes(assignment, volumes, record_size):
    generated = float(sum(volumes[v] for v in assignment))
    clusters: dict = {}
    for v, ap in assignment.items():
        clusters.setdefault(ap, []).append(volumes[v])
    uploaded = float(sum(record_size(clusters[ap], volumes[ap]) for ap in clusters))
    return generated, uploaded


def select_aggregation_points(
    graph: ProximityGraph,
    k: int,
    volumes: Mapping[VehicleId, float] | None = None,
    record_size: Callable[[Sequence[float], float], float] | None = None,
) -> AggregationPlan:
    """Greedy k-hop dominating set driven by closeness centrality.

    Parameters
    ----------
    graph : ProximityGraph
    k : int
        Maximum D2D hop count between a vehicle and its aggregation point.
    volumes : mapping, optional
        Per-vehicle generated bytes this period; unit volumes when omitted.
    record_size : callable, optional
        ``f(member_volumes, ap_volume) -> bytes`` for one aggregated upload.
        By default an aggregation point uploads one record the size of its
        own period volume, whatever the cluster size.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    volumes = volumes or {v: 1.0 for v in graph.nodes}
    record_size = record_size or _default_record_size
    scores = closeness_centrality(graph)
    order = sorted(graph.nodes, key=lambda v: (-scores[v], v))
    assignment: dict[VehicleId, VehicleId] = {}
    aps = []
    for cand in order:
        if cand in assignment:
            continue
        aps.append(cand)
        for v in bfs_distances(graph, cand, cutoff=k):
            if v not in assignment:
                assignment[v] = cand
    generated, uploaded = _plan_volumes(assignment, volumes, record_size)
    return AggregationPlan(k, sorted(aps), assignment, generated, uploaded, aps)


def aggregation_rate(plan: AggregationPlan) -> float:
    if plan.generated_volume <= 0:
        raise ValueError("aggregation rate is undefined for zero generated volume")
    return 1.0 - plan.uploaded_volume / plan.generated_volume


def rb_baseline(
    snapshot: VehicleSnapshot,
    radius: float,
    reservation_probability: float,
    seed: int,
) -> AggregationPlan:
    """Reservation-style baseline surrogate.

    Each vehicle (in id order) reserves the uplink with the given
    probability. Reservers become aggregation points and absorb uncovered
    one-hop neighbours, lowest reserver id first; leftovers upload alone.
    """
    if not 0 < reservation_probability <= 1:
        raise ValueError("reservation probability must be in (0, 1]")
    graph = build_proximity_graph(snapshot, radius)
    rng = make_rng(seed)
    draws = rng.random(len(graph.nodes))
    reservers = [v for v, u in zip(graph.nodes, draws) if u < reservation_probability]
    assignment = {v: v for v in reservers}
    for r in reservers:
        for w in sorted(graph.adjacency[r]):
            assignment.setdefault(w, r)
    for v in graph.nodes:
        assignment.setdefault(v, v)
    aps = sorted(set(assignment.values()))
    generated, uploaded = _plan_volumes(assignment, snapshot.volumes(), _default_record_size)
    return AggregationPlan(1, aps, assignment, generated, uploaded, list(reservers))


def check_plan(graph: ProximityGraph, plan: AggregationPlan) -> None:
    """Raise AssertionError if ``plan`` breaks any AggregationPlan invariant."""
    nodes = set(graph.nodes)
    assert set(plan.assignment) == nodes, "every node must be assigned"
    assert set(plan.aggregation_points) <= nodes
    assert set(plan.assignment.values()) == set(plan.aggregation_points)
    for ap in plan.aggregation_points:
        assert plan.assignment[ap] == ap, f"AP {ap!r} not assigned to itself"
    for ap in plan.aggregation_points:
        reach = bfs_distances(graph, ap, cutoff=plan.hops)
        for v in plan.members(ap):
            assert v in reach, f"{v!r} farther than {plan.hops} hops from {ap!r}"


def upload_cost(
    snapshots: Sequence[VehicleSnapshot],
    plans: Sequence[AggregationPlan],
    period: float | None = None,
) -> list[tuple[float, float]]:
    """Bytes per second uploaded in each period.

    ``period`` defaults to the spacing of the snapshot times (1 s for a
    single snapshot).
    """
    if len(snapshots) != len(plans):
        raise ValueError(f"{len(snapshots)} snapshots but {len(plans)} plans")
    if period is None:
        times = [s.time for s in snapshots]
        gaps = [b - a for a, b in zip(times, times[1:]) if b > a]
        period = min(gaps) if gaps else 1.0
    if period <= 0:
        raise ValueError("period must be positive")
    return [(s.time, p.uploaded_volume / period) for s, p in zip(snapshots, plans)]


def metrics_for(plan: AggregationPlan, period: float = 1.0) -> AggregationMetrics:
    rate = aggregation_rate(plan) if plan.generated_volume > 0 else 0.0
    return AggregationMetrics(rate, plan.uploaded_volume / period)


# -- traces -------------------------------------------------------------------

TRACE_HEADER = ("t", "vehicle_id", "x", "y", "volume")
METRICS_HEADER = ("t", "n_vehicles", "n_aps", "aggregation_rate", "upload_cost")


def _parse_id(text: str):
    return int(text) if text.lstrip("-").isdigit() else text


def read_trace(path) -> list[VehicleSnapshot]:
    by_t: dict[float, list[Vehicle]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRACE_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"trace {path} missing columns {sorted(missing)}")
        for row in reader:
            t = float(row["t"])
            by_t.setdefault(t, []).append(
                Vehicle(_parse_id(row["vehicle_id"]), float(row["x"]), float(row["y"]),
                        float(row["volume"]))
            )
    return [VehicleSnapshot(t, by_t[t]) for t in sorted(by_t)]


def write_trace(snapshots: Iterable[VehicleSnapshot], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for s in snapshots:
        for v in sorted(s.vehicles, key=lambda v: v.vehicle_id):
            w.writerow((repr(s.time), v.vehicle_id, f"{v.x:.3f}", f"{v.y:.3f}", repr(v.volume)))


def generate_trace(
    n_vehicles: int,
    width: float,
    height: float,
    steps: int,
    seed: int,
    *,
    volume: float = 1000.0,
    speed: tuple[float, float] = (5.0, 15.0),
    period: float = 1.0,
) -> list[VehicleSnapshot]:
    """Random-waypoint mobility: uniform start, uniform waypoints, uniform speed."""
    if n_vehicles < 0 or steps < 1 or width <= 0 or height <= 0:
        raise ValueError("need n_vehicles >= 0, steps >= 1 and a positive area")
    rng = make_rng(seed)
    size = np.array([width, height])
    pos = rng.random((n_vehicles, 2)) * size
    goal = rng.random((n_vehicles, 2)) * size
    vel = rng.uniform(speed[0], speed[1], n_vehicles)
    out = []
    for step in range(steps):
        vehicles = [Vehicle(i, float(pos[i, 0]), float(pos[i, 1]), volume) for i in range(n_vehicles)]
        out.append(VehicleSnapshot(step * period, vehicles))
        delta = goal - pos
        dist = np.hypot(delta[:, 0], delta[:, 1])
        travel = vel * period
        arrived = dist <= travel
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(arrived, 1.0, travel / np.where(dist == 0, 1.0, dist))
        pos = pos + delta * frac[:, None]
        n_new = int(arrived.sum())
        if n_new:
            goal[arrived] = rng.random((n_new, 2)) * size
            vel[arrived] = rng.uniform(speed[0], speed[1], n_new)
    return out
