"""Command-line driver: ``fpkpinn train | simulate | compare | presets``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfg
from .errors import ConfigError, FpkError, NumericError
from .report import write_reference_csv
from .runner import (build_problem, cache_path, check_same_problem, compute_reference,
                     grid_spec, run_experiment)
from .train import VARIANTS

log = logging.getLogger("fpkpinn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _load_config(args) -> cfg.RunConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        return cfg.load(args.config)
    if args.preset:
        return cfg.preset(args.preset)
    raise ConfigError("a --config file or --preset name is required")


def _with_seed(config: cfg.RunConfig, seed, suffix: bool) -> cfg.RunConfig:
    if seed is None:
        return config
    name = f"{config.run.name}_s{seed}" if suffix else config.run.name
    return config.updated(run={"seed": seed, "name": name})


def _train_one(config_dict: dict, out_dir) -> tuple[str, bool, str]:
    config = cfg.from_dict(config_dict)
    result = run_experiment(config, out_dir=out_dir)
    return str(result.run_dir), result.state.aborted, result.state.abort_reason


def cmd_train(args) -> int:
    config = _load_config(args)
    seeds = args.seed or [None]
    configs = [_with_seed(config, s, len(seeds) > 1) for s in seeds]
    out_dirs = []
    for c in configs:
        if args.out and len(configs) > 1:
            out_dirs.append(str(Path(args.out) / c.run.name))
        else:
            out_dirs.append(args.out)
    jobs = [(c.to_dict(), o) for c, o in zip(configs, out_dirs)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_train_one, *zip(*jobs)))
    else:
        results = [_train_one(*job) for job in jobs]
    status = EXIT_OK
    for run_dir, aborted, reason in results:
        if aborted:
            print(f"{run_dir}: numeric failure ({reason}); best checkpoint exported",
                  file=sys.stderr)
            status = EXIT_NUMERIC
        else:
            print(run_dir)
    return status


def cmd_simulate(args) -> int:
    config = _load_config(args)
    if args.seed:
        config = config.updated(reference={"seed": args.seed[0]})
    problem = build_problem(config)
    grid = grid_spec(config, problem)
    ref, ensemble = compute_reference(config, problem, grid)
    out = Path(args.out or Path(config.run.out_dir) / f"{config.run.name}_reference")
    out.mkdir(parents=True, exist_ok=True)
    write_reference_csv(out / "reference.csv", grid, ref)
    if ensemble is not None:
        cache = cache_path(config, problem, grid)
        cache.parent.mkdir(parents=True, exist_ok=True)
        np.save(cache, ref)
        with open(out / "paths_summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            d = problem.d
            writer.writerow(["t", "n_finite"] + [f"mean_{i}" for i in range(d)]
                            + [f"std_{i}" for i in range(d)])
            for col, t in enumerate(ensemble.times):
                states = ensemble.states(col)
                writer.writerow([repr(float(t)), len(states)]
                                + [repr(float(v)) for v in states.mean(axis=0)]
                                + [repr(float(v)) for v in states.std(axis=0)])
        print(f"{out} (cached as {cache})")
    else:
        print(out)
    return EXIT_OK


def comparison_rows(run_dirs) -> list[dict]:
    if len(run_dirs) < 2:
        raise ConfigError("compare needs at least two run directories")
    records = []
    for d in run_dirs:
        path = Path(d) / "metrics.json"
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
        data["run"] = str(d)
        records.append(data)
    check_same_problem(records)
    order = {v: i for i, v in enumerate(VARIANTS)}
    records.sort(key=lambda r: (order.get(r["variant"], len(order)), r["seed"], r["run"]))
    return [{"run": r["run"], "variant": r["variant"], "seed": r["seed"], "MAE": r["mae"],
             "R_PDE": r["mean_pde_residual"], "MSE": r["mse"]} for r in records]


def format_table(rows) -> str:
    head = f"{'model':<10} {'seed':>5} {'MAE':>10} {'R_PDE':>10} {'MSE':>10}  run"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['variant']:<10} {r['seed']:>5} {r['MAE']:>10.4g} "
                     f"{r['R_PDE']:>10.4g} {r['MSE']:>10.3g}  {r['run']}")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    rows = comparison_rows(args.runs)
    print(format_table(rows))
    if args.out:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        out = Path(args.out)
        if out.suffix != ".csv":
            out.mkdir(parents=True, exist_ok=True)
            out = out / "comparison.csv"
        out.write_text(buf.getvalue())
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.action == "list":
        for name in cfg.preset_names():
            c = cfg.preset(name)
            print(f"{name:<16} {c.problem.name:<9} {c.run.variant}")
    else:
        if not args.name:
            raise ConfigError("presets show needs a preset name")
        sys.stdout.write(cfg.preset_text(args.name))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpkpinn", description=__doc__.split(":")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", metavar="PATH", help="TOML run configuration")
        p.add_argument("--preset", metavar="NAME", help="shipped preset instead of a file")
        p.add_argument("--seed", type=int, nargs="+", metavar="N",
                       help="override the seed; several seeds fan out into separate runs")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--jobs", type=int, default=1, metavar="N",
                       help="parallel worker processes for multi-seed runs")

    p = sub.add_parser("train", help="train one variant and export its artifacts")
    run_flags(p)
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("simulate", help="build and cache the reference density grid")
    run_flags(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("compare", help="tabulate metrics of finished runs")
    p.add_argument("runs", nargs="*", metavar="RUN_DIR")
    p.add_argument("--out", metavar="PATH", help="write the table as CSV")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("presets", help="list or print shipped presets")
    p.add_argument("action", choices=("list", "show"))
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FpkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
