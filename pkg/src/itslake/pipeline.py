"""Seeded runs wiring the applications through the bus and the lake.

Each run publishes its raw inputs on bus topics, lets the lake ingest them,
runs the application, records derived objects with lineage, applies the
tiering policy and writes::

    <out>/metrics.csv   use-case metrics (byte-identical for a fixed config)
    <out>/report.txt    config echo, metrics, lake statistics, wall-clock
    <out>/catalog.csv   catalog dump (same format as ``lake inspect``)
    <out>/config.txt    flat key=value echo that reproduces the run
    <out>/lake.json     catalog metadata, read by ``lake inspect/lineage``
    <out>/bus_log.csv   bus log, read by ``bus trace``
"""

from __future__ import annotations

import csv
import io
import json
import logging
import pickle
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import driverid, handover, vsn
from .databus import DataBus, Message, write_trace
from .lakecore import DataLake, Tier, TierPolicy, Zone, catalog_csv

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending parameter."""

    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name


@dataclass
class RunConfig:
    command: str
    out: Path
    seed: int = 0
    params: dict[str, Any] = field(default_factory=dict)
    verbosity: int = 0

    def echo(self) -> str:
        items = {"command": self.command, "seed": self.seed, "out": str(self.out)}
        items.update(self.params)
        return "".join(f"{k}={items[k]}\n" for k in sorted(items))


@dataclass
class RunReport:
    config: RunConfig
    metrics_header: tuple[str, ...]
    metrics: list[tuple]
    summary: dict[str, Any]
    lake_stats: dict[str, int]
    wall_clock: float = 0.0

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.metrics_header)
        w.writerows(self.metrics)
        return buf.getvalue()

    def render(self) -> str:
        lines = ["# config", self.config.echo().rstrip("\n"), "", "# summary"]
        lines += [f"{k}={self.summary[k]}" for k in sorted(self.summary)]
        lines += ["", "# lake"]
        lines += [f"{k}={self.lake_stats[k]}" for k in sorted(self.lake_stats)]
        lines += ["", "# metrics", self.metrics_csv().rstrip("\n"), ""]
        lines.append(f"wall_clock_s={self.wall_clock:.3f}")
        return "\n".join(lines) + "\n"


DEFAULT_POLICY = TierPolicy(hot_access_threshold=2, window=10.0, cold_age=5.0)


class LakeIngestor:
    """Bus subscriber that catalogs every message it receives."""

    def __init__(self, bus: DataBus, lake: DataLake, pattern: str = "its/#", name: str = "lake"):
        self.lake = lake
        self.by_message: dict[int, int] = {}
        bus.register(name, self._on_message)
        bus.subscribe(pattern, name)

    def _on_message(self, msg: Message):
        seg = msg.topic.segments
        tags = {"topic": str(msg.topic)}
        if len(seg) >= 2:
            tags["device"] = seg[1]
        entry = self.lake.ingest(msg.payload, str(msg.topic), tags=tags, t=msg.timestamp)
        self.by_message[msg.id] = entry.object_id

    def last(self) -> int:
        return self.by_message[max(self.by_message)]


def _get(params, name, kind, default=None, check: Callable[[Any], bool] | None = None, why=""):
    raw = params.get(name, default)
    if raw is None:
        raise ConfigError(name, "required")
    try:
        value = kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(name, f"cannot parse {raw!r} as {kind.__name__}") from None
    if check is not None and not check(value):
        raise ConfigError(name, why or f"value {value!r} out of range")
    params[name] = value
    return value


def _fmt(x: float) -> str:
    return f"{x:.6f}"


# -- VSN ------------------------------------------------------------------------


def run_vsn(cfg: RunConfig, bus: DataBus, lake: DataLake) -> RunReport:
    p = cfg.params
    trace = Path(_get(p, "trace", str))
    radius = _get(p, "radius", float, 100.0, lambda v: v > 0, "must be positive")
    hops = _get(p, "hops", int, 3, lambda v: v >= 1, "must be >= 1")
    algo = _get(p, "algo", str, "centrality", lambda v: v in ("centrality", "rb"), "centrality|rb")
    prob = _get(p, "rb_probability", float, 0.2, lambda v: 0 < v <= 1, "must be in (0, 1]")
    batch = _get(p, "batch_size", int, 64, lambda v: v >= 1, "must be >= 1")
    if not trace.is_file():
        raise ConfigError("trace", f"no such file {trace}")
    snapshots = vsn.read_trace(trace)
    ingestor = LakeIngestor(bus, lake)

    plans = []
    rows = []
    for step, snap in enumerate(snapshots):
        loc_ids = {}
        for v in sorted(snap.vehicles, key=lambda v: v.vehicle_id):
            payload = json.dumps({"x": v.x, "y": v.y, "volume": v.volume}, sort_keys=True).encode()
            bus.publish(f"its/v{v.vehicle_id}/location", payload, snap.time)
            loc_ids[v.vehicle_id] = ingestor.last()
        graph = vsn.build_proximity_graph(snap, radius)
        if algo == "centrality":
            plan = vsn.select_aggregation_points(graph, hops, snap.volumes())
        else:
            plan = vsn.rb_baseline(snap, radius, prob, (cfg.seed + step) % 2**64)
        plans.append(plan)
        agg_ids = []
        for ap in plan.aggregation_points:
            members = plan.members(ap)
            payload = json.dumps({"ap": ap, "members": members}).encode()
            e = lake.derive([loc_ids[m] for m in members], "aggregate", payload,
                            zone=Zone.PROCESSING, t=snap.time, tags={"kind": "vsn_upload", "ap": str(ap)})
            agg_ids.append(e.object_id)
        if agg_ids:
            payload = json.dumps({
                "t": snap.time, "algo": algo, "hops": plan.hops,
                "aggregation_points": plan.aggregation_points,
            }).encode()
            lake.derive(agg_ids, f"select_{algo}", payload, zone=Zone.INSIGHTS, t=snap.time,
                        tags={"kind": "vsn_plan", "t": repr(snap.time)})
            lake.transfer(agg_ids, Tier.CLOUD, batch)
    costs = vsn.upload_cost(snapshots, plans)
    for snap, plan, (t, cost) in zip(snapshots, plans, costs):
        rate = vsn.aggregation_rate(plan) if plan.generated_volume > 0 else 0.0
        rows.append((repr(t), len(snap.vehicles), len(plan.aggregation_points), _fmt(rate), _fmt(cost)))
    now = snapshots[-1].time if snapshots else 0.0
    lake.execute(lake.apply_tiering(DEFAULT_POLICY, now), batch)
    rates = [float(r[3]) for r in rows]
    summary = {
        "snapshots": len(snapshots),
        "mean_aggregation_rate": _fmt(float(np.mean(rates))) if rates else "nan",
        "peak_upload_cost": _fmt(max((c for _, c in costs), default=0.0)),
    }
    return RunReport(cfg, vsn.METRICS_HEADER, rows, summary, lake.stats())


# -- handover -----------------------------------------------------------------------


def run_handover(cfg: RunConfig, bus: DataBus, lake: DataLake) -> RunReport:
    p = cfg.params
    route_path = Path(_get(p, "route", str))
    sites_path = Path(_get(p, "sites", str))
    model = _get(p, "model", str, "nearest", lambda v: v in ("nearest", "hysteresis", "minimal"),
                 "nearest|hysteresis|minimal")
    margin = _get(p, "margin", float, 0.0, lambda v: v >= 0, "must be >= 0")
    route_id = _get(p, "route_id", str, route_path.stem)
    for name, path in (("route", route_path), ("sites", sites_path)):
        if not path.is_file():
            raise ConfigError(name, f"no such file {path}")
    route = handover.read_route(route_path)
    sites = handover.read_sites(sites_path)
    ingestor = LakeIngestor(bus, lake)

    reading_ids = []
    for r in route:
        payload = json.dumps({"index": r.index, "x": r.x, "y": r.y}).encode()
        bus.publish(f"its/ue-{route_id}/location", payload, r.time)
        reading_ids.append(ingestor.last())
    t_end = route[-1].time if route else 0.0
    if model == "minimal":
        summary = handover.minimize_handovers(route, sites)
    else:
        trace = (handover.allocate_nearest(route, sites) if model == "nearest"
                 else handover.allocate_hysteresis(route, sites, margin))
        summary = handover.handover_sequence(trace)
    handover.check_trace(route, sites, summary.trace)
    alloc = lake.derive(reading_ids, f"allocate_{model}",
                        json.dumps(summary.trace).encode(), zone=Zone.PROCESSING, t=t_end,
                        tags={"route_id": route_id, "model": model})
    out = {"summary_line": summary.line(), "model": model, "readings": len(route)}
    if model == "minimal":
        handover.store_plan(route_id, summary, lake, parents=[alloc.object_id], t=t_end)
        recalled = handover.plan_from_history(route_id, lake, t=t_end)
        out["recalled_sequence_matches"] = recalled.sequence == summary.sequence
    else:
        lake.derive([alloc.object_id], "handover_sequence", summary.to_json().encode(),
                    zone=Zone.INSIGHTS, t=t_end, tags={"route_id": route_id, "model": model})
    lake.execute(lake.apply_tiering(DEFAULT_POLICY, t_end), 64)
    rows = [(i, "" if s is None else s) for i, s in enumerate(summary.trace)]
    return RunReport(cfg, handover.OUTPUT_HEADER, rows, out, lake.stats())


# -- driver identification ------------------------------------------------------------


def _windows_payload(windows) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.stack([w.data for w in windows]), allow_pickle=False)
    return buf.getvalue()


def run_driverid(cfg: RunConfig, bus: DataBus, lake: DataLake) -> RunReport:
    p = cfg.params
    preset = _get(p, "preset", str, "small", lambda v: v in driverid.PRESETS, "small|large")
    clf = _get(p, "classifier", str, "knn", lambda v: v in ("knn", "gnb"), "knn|gnb")
    k = _get(p, "k", int, 1, lambda v: v >= 1 and v % 2 == 1, "must be a positive odd integer")
    split = _get(p, "split", float, 0.75, lambda v: 0 < v < 1, "must be in (0, 1)")
    dim = _get(p, "D", int, 3, lambda v: 2 <= v <= 7, "must be in [2, 7]")
    tau = _get(p, "tau", int, 1, lambda v: v >= 1, "must be >= 1")
    config = driverid.OrdinalConfig(dim, tau)

    windows = driverid.generate_synthetic_drivers(driverid.PRESETS[preset], cfg.seed)
    ingestor = LakeIngestor(bus, lake)
    raw_ids = {}
    for d in range(driverid.N_DRIVERS):
        mine = [w for w in windows if w.driver == d]
        bus.publish(f"its/driver{d}/obd", _windows_payload(mine), 0.0)
        raw_ids[d] = ingestor.last()

    # training runs in the cloud data lake
    lake.transfer(list(raw_ids.values()), Tier.CLOUD, 4)
    feats = driverid.extract_features(windows, config)
    feat_ids = []
    for d, oid in raw_ids.items():
        mine = np.array([f.values for f in feats if f.driver == d])
        means = mine.mean(axis=0)
        lake.annotate(oid, {name: float(v) for name, v in zip(driverid.FEATURES_HEADER[2:], means)})
        e = lake.derive([oid], "entropy_complexity", mine.astype("<f8").tobytes(),
                        zone=Zone.PROCESSING, t=1.0, tier=Tier.CLOUD,
                        tags={"driver": str(d), "D": str(dim), "tau": str(tau)})
        feat_ids.append(e.object_id)

    model = driverid.KNN(k) if clf == "knn" else driverid.GaussianNBOvR()
    X, y = driverid.feature_matrix(feats)
    report = driverid.evaluate({clf: model}, (X, y), split, cfg.seed)
    model_entry = lake.derive(feat_ids, f"train_{clf}", pickle.dumps(model, protocol=4),
                              zone=Zone.INSIGHTS, t=2.0, tier=Tier.CLOUD,
                              tags={"kind": "driver_model", "classifier": clf})
    # ship the fitted model to the edge for low-latency inference
    lake.transfer([model_entry.object_id], Tier.EDGE, 1)
    edge_entry = lake.get(model_entry.object_id)
    assert edge_entry.tier is Tier.EDGE
    edge_model = pickle.loads(lake.read(model_entry.object_id, t=3.0))
    _, te = driverid.stratified_split(y, split, cfg.seed)
    edge_pred = edge_model.predict(X[te])
    edge_acc = float((edge_pred == y[te]).mean())

    res = report.results[clf]
    rows = [(clf, _fmt(res.accuracy), report.n_train, report.n_test)]
    summary = {
        "preset": preset,
        "windows": len(windows),
        "edge_inference_accuracy": _fmt(edge_acc),
        "confusion": ";".join(",".join(map(str, r)) for r in res.confusion),
    }
    lake.execute(lake.apply_tiering(DEFAULT_POLICY, 3.0), 64)
    return RunReport(cfg, ("classifier", "accuracy", "n_train", "n_test"), rows, summary, lake.stats())


RUNNERS = {"vsn": run_vsn, "handover": run_handover, "driverid": run_driverid}


def run_pipeline(cfg: RunConfig) -> RunReport:
    if cfg.command not in RUNNERS:
        raise ConfigError("command", f"unknown use case {cfg.command!r}")
    if not 0 <= int(cfg.seed) < 2**64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    cfg.out = Path(cfg.out).resolve()
    for key in ("trace", "route", "sites"):
        if cfg.params.get(key) is not None:
            cfg.params[key] = str(Path(cfg.params[key]).resolve())
    start = time.perf_counter()
    bus, lake = DataBus(), DataLake()
    report = RUNNERS[cfg.command](cfg, bus, lake)
    bus.close()
    report.wall_clock = time.perf_counter() - start
    write_outputs(cfg.out, report, bus, lake)
    log.info("run %s finished in %.2fs", cfg.command, report.wall_clock)
    return report


def write_outputs(out: Path, report: RunReport, bus: DataBus, lake: DataLake) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.metrics_csv())
    (out / "report.txt").write_text(report.render())
    (out / "catalog.csv").write_text(catalog_csv(lake.query_catalog()))
    (out / "config.txt").write_text(report.config.echo())
    (out / "lake.json").write_text(lake.dump_metadata())
    with open(out / "bus_log.csv", "w", newline="") as fh:
        write_trace(bus.log, fh)
    if "summary_line" in report.summary:
        (out / "summary.txt").write_text(report.summary["summary_line"] + "\n")


def load_config_file(path) -> dict[str, str]:
    """Flat ``key=value`` file; blank lines and ``#`` comments ignored."""
    params = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}", "expected key=value")
        key, value = line.split("=", 1)
        params[key.strip()] = value.strip()
    return params


# -- scenario generation ------------------------------------------------------------------


def _parse_area(text: str) -> tuple[float, float]:
    try:
        w, h = (float(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError("area", f"expected WxH, got {text!r}") from None
    if w <= 0 or h <= 0:
        raise ConfigError("area", "dimensions must be positive")
    return w, h


def generate_scenario(kind: str, params: dict[str, Any], seed: int, out: Path) -> list[Path]:
    """Write synthetic input CSVs for ``kind``; returns the written paths."""
    out = Path(out)
    params = dict(params)
    if kind == "vsn":
        n = _get(params, "vehicles", int, 500, lambda v: 1 <= v <= 100_000, "must be in [1, 100000]")
        w, h = _parse_area(params.get("area", "1000x1000"))
        steps = _get(params, "steps", int, 1, lambda v: 1 <= v <= 100_000, "must be in [1, 100000]")
        volume = _get(params, "volume", float, 1000.0, lambda v: v > 0, "must be positive")
        snaps = vsn.generate_trace(n, w, h, steps, seed, volume=volume)
        path = out if out.suffix == ".csv" else out / "trace.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            vsn.write_trace(snaps, fh)
        return [path]
    if kind == "handover":
        out.mkdir(parents=True, exist_ok=True)
        if params.get("fixture") == "corridor":
            route, sites = handover.corridor_fixture()
        else:
            route, sites = handover.generate_grid_scenario(
                rows=_get(params, "rows", int, 5, lambda v: 1 <= v <= 100),
                cols=_get(params, "cols", int, 5, lambda v: 1 <= v <= 100),
                spacing=_get(params, "spacing", float, 400.0, lambda v: v > 0),
                n_readings=_get(params, "readings", int, 200, lambda v: 1 <= v <= 1_000_000),
                noise=_get(params, "noise", float, 20.0, lambda v: v >= 0),
                seed=seed,
            )
        paths = [out / "route.csv", out / "sites.csv"]
        with open(paths[0], "w", newline="") as fh:
            handover.write_route(route, fh)
        with open(paths[1], "w", newline="") as fh:
            handover.write_sites(sites, fh)
        return paths
    if kind == "driverid":
        preset = params.get("preset", "small")
        if "n" in params:
            n = _get(params, "n", int, check=lambda v: v >= 1, why="must be >= 1")
        elif preset in driverid.PRESETS:
            n = driverid.PRESETS[preset]
        else:
            raise ConfigError("preset", "small|large")
        windows = driverid.generate_synthetic_drivers(n, seed)
        path = out if out.suffix == ".csv" else out / "dataset.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            driverid.write_dataset(windows, fh)
        return [path]
    raise ConfigError("kind", f"unknown scenario kind {kind!r}")
