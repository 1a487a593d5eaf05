"""Command-line entry point: run, compare, sweep and ingest."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from . import __version__
from .config import ConfigError, ExperimentConfig, dump_config, from_dict, parse_config
from .demand import DAY, TraceParseError, ingest_trace, write_slotted_trace
from .harness import MetricsSeries, aggregate_replications, run_replication

log = logging.getLogger("mamabcache")

PER_SLOT_COLUMNS = ("slot", "replication", "delay", "reward", "requests", "avg_delay",
                    "regret", "sampled_regret")
AGGREGATE_METRICS = ("delay", "reward", "requests", "avg_delay", "regret", "sampled_regret")


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return ""
    if x.is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(x)


def emit_metrics_csv(series: MetricsSeries, manifest: dict, out_dir) -> list[Path]:
    """Write per-slot and aggregate CSVs, the config echo and the manifest."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / "per_slot.csv", out_dir / "aggregate.csv",
                 out_dir / "config.yaml", out_dir / "manifest.json"]
        with open(paths[0], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PER_SLOT_COLUMNS)
            for rep in series.replications:
                cols = [rep.delay, rep.reward, rep.requests, rep.avg_delay, rep.regret,
                        rep.sampled_regret]
                for t in range(len(rep)):
                    w.writerow([t, rep.replication, *(_fmt(c[t]) for c in cols)])
        with open(paths[1], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slot", *(f"{s}_{m}" for m in AGGREGATE_METRICS for s in ("mean", "std"))])
            stats = []
            for m in AGGREGATE_METRICS:
                stats += [series.mean(m), series.std(m)]
            for t in range(len(series)):
                w.writerow([t, *(_fmt(s[t]) for s in stats)])
        paths[2].write_text(dump_config(from_dict(manifest["config"])))
        manifest = dict(manifest, outputs=[p.name for p in paths])
        paths[3].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write metrics to {exc.filename or out_dir}: {exc.strerror}") from exc
    return paths


def build_manifest(cfg: ExperimentConfig, series: MetricsSeries) -> dict:
    reps = []
    for r in series.replications:
        reps.append({
            "replication": r.replication,
            "seed": [cfg.seed, r.replication],
            "initial_slots": r.initial_length,
            "initial_regret": None if not r.stationary else r.initial_regret,
            "oracle_expected_reward": None if not r.stationary else r.oracle_value,
            "core_delay": r.core_delay,
            "final_avg_delay": float(r.avg_delay[-1]),
            "max_conservation_residual": float(r.residual.max()),
        })
    return {
        "version": __version__,
        "learner": series.learner,
        "config": cfg.to_dict(),
        "replications": reps,
    }


def _run_one(args):
    cfg_dict, rep, learner = args
    return run_replication(from_dict(cfg_dict), rep, learner)


def run_series(cfg: ExperimentConfig, learner=None, jobs=1) -> MetricsSeries:
    learner = learner or cfg.learner
    tasks = [(cfg.to_dict(), r, learner) for r in range(cfg.replications)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    return aggregate_replications(results, learner)


def run_and_emit(cfg, out_dir, learner=None, jobs=1) -> MetricsSeries:
    learner = learner or cfg.learner
    cfg = cfg.replace(learner=learner)
    log.info("running %s: %d replication(s) to %s", learner, cfg.replications, out_dir)
    series = run_series(cfg, learner, jobs)
    emit_metrics_csv(series, build_manifest(cfg, series), out_dir)
    return series


def _summary_row(series: MetricsSeries) -> dict:
    row = {"learner": series.learner,
           "final_avg_delay_mean": series.mean("avg_delay")[-1],
           "final_avg_delay_std": series.std("avg_delay")[-1]}
    if series.replications[0].stationary:
        row["final_regret_mean"] = series.mean("regret")[-1]
        row["final_regret_std"] = series.std("regret")[-1]
    return row


def _write_summary(rows, path):
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([r[k] if isinstance(r.get(k), str) else _fmt(r.get(k, float("nan"))) for k in keys])


def _load(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else from_dict({})
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.replications is not None:
        changes["replications"] = args.replications
    if getattr(args, "T_total", None) is not None:
        changes["T_total"] = args.T_total
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        changes[key] = yaml.safe_load(value)
    return cfg.replace(**changes) if changes else cfg


def _learners(args, cfg):
    return [s.strip() for s in args.learners.split(",") if s.strip()] if args.learners else [cfg.learner]


def cmd_run(args):
    cfg = _load(args)
    learners = _learners(args, cfg)
    if len(learners) != 1:
        raise ConfigError("run takes a single learner; use compare for several")
    series = run_and_emit(cfg, args.out, learners[0], args.jobs)
    print(f"{series.learner}: final average delay {series.mean('avg_delay')[-1]:.6g} s -> {args.out}")


def cmd_compare(args):
    cfg = _load(args)
    rows = []
    for name in _learners(args, cfg):
        series = run_and_emit(cfg, Path(args.out) / name, name, args.jobs)
        rows.append(_summary_row(series))
        print(f"{name}: final average delay {rows[-1]['final_avg_delay_mean']:.6g} s")
    _write_summary(rows, Path(args.out) / "summary.csv")


def cmd_sweep(args):
    cfg = _load(args)
    key, sep, values = args.sweep.partition("=")
    if not sep or not values:
        raise ConfigError(f"--sweep expects key=v1,v2,..., got {args.sweep!r}")
    rows = []
    for raw in values.split(","):
        value = yaml.safe_load(raw)
        point = cfg.replace(**{key: value})
        for name in _learners(args, cfg):
            series = run_and_emit(point, Path(args.out) / f"{key}={raw}" / name, name, args.jobs)
            rows.append({"key": key, "value": raw, **_summary_row(series)})
            print(f"{key}={raw} {name}: final average delay {rows[-1]['final_avg_delay_mean']:.6g} s")
    _write_summary(rows, Path(args.out) / "summary.csv")


def cmd_ingest(args):
    trace = ingest_trace(args.trace, args.slot_length, args.user_cap, args.format)
    out = Path(args.out)
    if out.suffix != ".csv":
        out = out / "trace.slots.csv"
    write_slotted_trace(trace, out)
    n = sum(len(b) for b in trace.batches)
    print(f"{trace.num_users} users, {trace.num_files} files, {len(trace)} slots, "
          f"{n} requests -> {out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mamabcache", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, learners_help):
        sp.add_argument("--config", help="YAML or JSON experiment config (defaults if omitted)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replications", type=int)
        sp.add_argument("--T-total", dest="T_total", type=int)
        sp.add_argument("--learners", help=learners_help)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. topology.comm_radius=30")
        sp.add_argument("--jobs", type=int, default=1, help="parallel replications")

    common(sub.add_parser("run", help="run one experiment"), "learner to run (overrides config)")
    common(sub.add_parser("compare", help="several learners on paired workloads"),
           "comma-separated learner names")
    sw = sub.add_parser("sweep", help="one config key over a list of values")
    common(sw, "comma-separated learner names")
    sw.add_argument("--sweep", required=True, metavar="KEY=V1,V2,...")
    ing = sub.add_parser("ingest", help="slot a rating trace into a cache file")
    ing.add_argument("--trace", required=True)
    ing.add_argument("--out", required=True, help="output .csv file or directory")
    ing.add_argument("--slot-length", type=int, default=DAY)
    ing.add_argument("--user-cap", type=int)
    ing.add_argument("--format", default="auto", choices=("auto", "movielens", "csv"))
    return p


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "sweep": cmd_sweep, "ingest": cmd_ingest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, TraceParseError, OSError, ValueError, RuntimeError) as exc:
        print(f"mamabcache: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
