"""Command-line entry point.

    itslake vsn {run,gen}
    itslake handover {run,gen}
    itslake driverid {run,features,gen}
    itslake lake {inspect,lineage}
    itslake bus trace

Exit codes: 0 success, 2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import driverid
from .lakecore import DataLake, LakeError, catalog_csv
from .pipeline import ConfigError, RunConfig, generate_scenario, load_config_file, run_pipeline

log = logging.getLogger("itslake")


class UsageError(Exception):
    pass


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _run_parser(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", type=Path, help="flat key=value file; flags override it")
    p.add_argument("--seed", type=_seed, default=None)
    p.add_argument("--out", type=Path, default=None)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="itslake", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    top = parser.add_subparsers(dest="group", required=True)

    g = top.add_parser("vsn", help="vehicular sensor network offloading")
    s = g.add_subparsers(dest="action", required=True)
    p = _run_parser(s, "run", "select aggregation points over a mobility trace")
    p.add_argument("--trace")
    p.add_argument("--radius", type=float)
    p.add_argument("--hops", type=int)
    p.add_argument("--algo", choices=("centrality", "rb"))
    p.add_argument("--rb-probability", dest="rb_probability", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p = s.add_parser("gen", help="write a synthetic random-waypoint trace")
    p.add_argument("--vehicles", type=int, default=500)
    p.add_argument("--area", default="1000x1000")
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--volume", type=float, default=1000.0)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", type=Path, required=True, help="CSV file or directory")

    g = top.add_parser("handover", help="eNB allocation and handover planning")
    s = g.add_subparsers(dest="action", required=True)
    p = _run_parser(s, "run", "allocate a route to eNBs")
    p.add_argument("--route")
    p.add_argument("--sites")
    p.add_argument("--model", choices=("nearest", "hysteresis", "minimal"))
    p.add_argument("--margin", type=float)
    p.add_argument("--route-id", dest="route_id")
    p = s.add_parser("gen", help="write a synthetic site grid and noisy route")
    p.add_argument("--rows", type=int, default=5)
    p.add_argument("--cols", type=int, default=5)
    p.add_argument("--spacing", type=float, default=400.0)
    p.add_argument("--readings", type=int, default=200)
    p.add_argument("--noise", type=float, default=20.0)
    p.add_argument("--fixture", choices=("corridor",), help="write the constructed corridor instead")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", type=Path, required=True)

    g = top.add_parser("driverid", help="driver identification")
    s = g.add_subparsers(dest="action", required=True)
    p = _run_parser(s, "run", "generate drivers, extract features, train and evaluate")
    p.add_argument("--preset", choices=tuple(driverid.PRESETS))
    p.add_argument("--classifier", choices=("knn", "gnb"))
    p.add_argument("--k", type=int)
    p.add_argument("--split", type=float)
    p.add_argument("--D", dest="D", type=int)
    p.add_argument("--tau", type=int)
    p = s.add_parser("features", help="entropy-complexity features from a dataset CSV")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--D", dest="D", type=int, default=3)
    p.add_argument("--tau", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p = s.add_parser("gen", help="write a synthetic driver dataset CSV")
    p.add_argument("--preset", choices=tuple(driverid.PRESETS), default="small")
    p.add_argument("--n", type=int, help="windows per driver (overrides preset)")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", type=Path, required=True)

    g = top.add_parser("lake", help="inspect a run's catalog")
    s = g.add_subparsers(dest="action", required=True)
    p = s.add_parser("inspect", help="dump the catalog as CSV")
    p.add_argument("--run", type=Path, default=Path("."), help="run output directory")
    p = s.add_parser("lineage", help="print an object's ancestry")
    p.add_argument("object_id", type=int)
    p.add_argument("--run", type=Path, default=Path("."))

    g = top.add_parser("bus", help="inspect a run's bus log")
    s = g.add_subparsers(dest="action", required=True)
    p = s.add_parser("trace", help="dump the bus log as CSV")
    p.add_argument("--run", type=Path, default=Path("."))
    return parser


RUN_KEYS = {
    "vsn": ("trace", "radius", "hops", "algo", "rb_probability", "batch_size"),
    "handover": ("route", "sites", "model", "margin", "route_id"),
    "driverid": ("preset", "classifier", "k", "split", "D", "tau"),
}


def _run(args) -> int:
    params: dict = {}
    if args.config is not None:
        params.update(load_config_file(args.config))
    for key in RUN_KEYS[args.group]:
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    seed = args.seed if args.seed is not None else params.pop("seed", None)
    params.pop("seed", None)
    out = args.out if args.out is not None else params.pop("out", None)
    params.pop("out", None)
    params.pop("command", None)
    if seed is None:
        raise ConfigError("seed", "required (pass --seed or set seed= in the config file)")
    if out is None:
        raise ConfigError("out", "required")
    try:
        seed = _seed(str(seed))
    except (ValueError, argparse.ArgumentTypeError):
        raise ConfigError("seed", f"invalid seed {seed!r}") from None
    report = run_pipeline(RunConfig(args.group, Path(out), seed, params, args.verbose))
    print(report.render(), end="")
    if "summary_line" in report.summary:
        print(report.summary["summary_line"])
    return 0


def _load_lake(run_dir: Path) -> DataLake:
    path = run_dir / "lake.json"
    if not path.is_file():
        raise FileNotFoundError(f"no lake.json in {run_dir}")
    return DataLake.load_metadata(path.read_text())


def dispatch(args) -> int:
    if args.action == "run":
        return _run(args)
    if args.group in ("vsn", "handover") and args.action == "gen":
        keys = (("vehicles", "area", "steps", "volume") if args.group == "vsn"
                else ("rows", "cols", "spacing", "readings", "noise", "fixture"))
        params = {k: getattr(args, k) for k in keys if getattr(args, k) is not None}
        for path in generate_scenario(args.group, params, args.seed, args.out):
            print(path)
        return 0
    if args.group == "driverid" and args.action == "gen":
        params = {"preset": args.preset}
        if args.n is not None:
            params["n"] = args.n
        for path in generate_scenario("driverid", params, args.seed, args.out):
            print(path)
        return 0
    if args.group == "driverid" and args.action == "features":
        config = driverid.OrdinalConfig(args.D, args.tau)
        with open(args.input, newline="") as fh:
            windows = driverid.read_dataset(fh)
        feats = driverid.extract_features(windows, config)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            driverid.write_features(feats, fh)
        return 0
    if args.group == "lake":
        lake = _load_lake(args.run)
        if args.action == "inspect":
            sys.stdout.write(catalog_csv(lake.query_catalog()))
        else:
            print(lake.lineage_of(args.object_id).render())
        return 0
    if args.group == "bus":
        path = args.run / "bus_log.csv"
        if not path.is_file():
            raise FileNotFoundError(f"no bus_log.csv in {args.run}")
        sys.stdout.write(path.read_text())
        return 0
    raise UsageError(f"unknown command {args.group} {args.action}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return dispatch(args)
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head)
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (ConfigError, UsageError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, LakeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
