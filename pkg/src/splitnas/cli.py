"""Command-line entry point: ``splitnas {search,baseline,oracle,estimate-power,eval}``.

Every run writes a self-describing directory:

    config.yaml          resolved config; file references point into inputs/
    inputs/              copies of the space, latency, power and surrogate files
    result.json          chosen sample, objective/latency breakdown, accuracies
    timing.json          wall-clock (kept apart so result.json is reproducible)
    results.csv          one row per model: method, seed, acc@p..., T, T_head, T_comm, T_tail, tau, combined
    trace.csv            one row per distribution-update iteration
    theta.npz            theta after every iteration (``theta`` array, iterations x n_params)
    model.npz            re-trained weights (supernet evaluator only)
    metrics_*.csv        per-stage training metrics (supernet evaluator only)

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import __version__
from .asng import UpdateAborted
from .baseline import VARIANTS
from .config import ConfigError, RunConfig, apply_overrides, config_from_dict, load_config
from .experiment import (
    RunOutcome,
    Setup,
    build,
    final_breakdown,
    report_row,
    result_columns,
    run_hwnas,
    run_nasc,
    seed_streams,
)
from .latency import LatencyError, estimate_power_from_table, read_latency_table
from .oracle import SpaceTooLarge, enumerate_optimum, export_report
from .space import ArchSample, SpaceError, decode, load_space
from .supernet import ToySupernet, TrainingDiverged, evaluate

log = logging.getLogger("splitnas")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


# ----------------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------------


def _copy_inputs(cfg: RunConfig, run_dir: Path) -> dict:
    """Copy referenced files into the run directory; return the rewritten config dict."""
    inputs = run_dir / "inputs"
    inputs.mkdir(parents=True, exist_ok=True)
    doc = cfg.to_dict()

    def copy(ref):
        if ref is None:
            return None
        src = cfg.path(ref)
        dst = inputs / src.name
        if src.resolve() != dst.resolve():
            shutil.copyfile(src, dst)
        return f"inputs/{src.name}"

    doc["space"] = copy(cfg.space)
    doc["surrogate"] = copy(cfg.surrogate)
    doc["latency"]["table"] = copy(cfg.latency.table)
    doc["latency"]["device_power"] = copy(cfg.latency.device_power)
    doc["out"] = None
    return doc


def _write_csv(path: Path, rows: list[dict], columns: Sequence[str] | None = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _sample_record(sample: ArchSample, setup: Setup) -> dict:
    net = decode(sample, setup.space)
    return {
        "indices": list(sample.indices),
        "blocks": list(net.blocks),
        "split": net.split,
        "mid_block": net.mid_block,
        "description": net.describe(),
    }


def result_payload(out: RunOutcome, setup: Setup) -> dict:
    return {
        "method": out.method,
        "seed": out.seed,
        "config_hash": setup.config.config_hash(),
        "evaluator": setup.config.evaluator,
        "sample": _sample_record(out.sample, setup),
        "objective": out.breakdown.as_dict(),
        "accuracy": out.accuracy,
        "test_loss": out.test_loss,
        "search_iterations": len(out.search.trace) if out.search else 0,
    }


def _rates(setup: Setup) -> list[float]:
    rates = set(setup.objective.dropout_set) | {setup.config.link.loss_prob}
    return sorted(rates)


def persist(out: RunOutcome, setup: Setup, run_dir: Path, seconds: float) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    doc = _copy_inputs(setup.config, run_dir)
    with open(run_dir / "config.yaml", "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=True)
    with open(run_dir / "result.json", "w") as fh:
        json.dump(result_payload(out, setup), fh, indent=2, sort_keys=True)
    with open(run_dir / "timing.json", "w") as fh:
        json.dump({"wall_clock_s": seconds}, fh)
    rates = _rates(setup)
    _write_csv(run_dir / "results.csv", [report_row(out.method, out.seed, out.accuracy, out.breakdown, rates)],
               result_columns(rates))
    if out.search is not None:
        _persist_search(out.search, run_dir)
    if out.split_scan:
        rows = [{"split": k, **b.as_dict()} for k, b in enumerate(out.split_scan)]
        _write_csv(run_dir / "split_scan.csv", rows)
    if out.pretrain_rows:
        _write_csv(run_dir / "metrics_pretrain.csv", out.pretrain_rows)
    if out.retrain_rows:
        _write_csv(run_dir / "metrics_retrain.csv", out.retrain_rows)
    if out.model is not None:
        out.model.save(run_dir / "model.npz")


def _persist_search(result, run_dir: Path) -> None:
    if result.trace:
        _write_csv(run_dir / "trace.csv", result.trace)
    if result.theta_history:
        np.savez(run_dir / "theta.npz", theta=np.stack([t.flat() for t in result.theta_history]))


def _run_dir(cfg: RunConfig, args, name: str) -> Path:
    base = Path(args.out or cfg.out or "runs")
    return base / f"{name}_seed{cfg.seed}"


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def _load(args) -> RunConfig:
    overrides = list(args.override or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def cmd_search(args) -> int:
    cfg = _load(args)
    setup = build(cfg)
    run_dir = _run_dir(cfg, args, "nasc")
    t0 = time.perf_counter()
    try:
        out = run_nasc(setup)
    except UpdateAborted as exc:
        run_dir.mkdir(parents=True, exist_ok=True)
        _persist_search(exc.partial, run_dir)
        raise
    persist(out, setup, run_dir, time.perf_counter() - t0)
    b = out.breakdown
    print(f"nasc: {decode(out.sample, setup.space).describe()}")
    print(f"  T = {b.T:.3f} ms (head {b.latency.head:.3f}, comm {b.latency.comm:.3f}, tail {b.latency.tail:.3f}), "
          f"T_th = {setup.objective.T_th:g}, loss = {b.loss:.4f}, combined = {b.combined:.4f}")
    print(f"  run directory: {run_dir}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = _load(args)
    variants = VARIANTS if args.variant == "both" else (args.variant.replace("-", "_"),)
    setup = build(cfg)
    t0 = time.perf_counter()
    outcomes = run_hwnas(setup, variants)
    seconds = time.perf_counter() - t0
    for variant, out in outcomes.items():
        run_dir = _run_dir(cfg, args, f"hwnas_{variant}")
        persist(out, setup, run_dir, seconds)
        b = out.breakdown
        status = "exceeds" if b.T > setup.objective.T_th else "meets"
        print(f"hwnas ({variant}): {decode(out.sample, setup.space).describe()}")
        print(f"  T = {b.T:.3f} ms ({status} T_th = {setup.objective.T_th:g}), loss = {b.loss:.4f}, "
              f"combined = {b.combined:.4f}")
        print(f"  run directory: {run_dir}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _load(args)
    setup = build(cfg)
    if setup.supernet_mode:
        raise ConfigError("evaluator: the oracle needs the tabular evaluator")
    report = enumerate_optimum(setup.space, setup.surrogate, setup.latency_model, setup.objective,
                               cap=args.cap)
    out_dir = Path(args.out or cfg.out or "runs")
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "oracle_report.csv"
    export_report(report, setup.space, path)
    best = report.ranking[report.best.sample_id()]
    print(f"best: {decode(report.best, setup.space).describe()}  (sample id {report.best.sample_id()})")
    print(f"  combined = {report.best_objective:.6f}, T = {best.T:.3f} ms, loss = {best.loss:.6f}")
    print(f"  feasible (T <= {setup.objective.T_th:g} ms): {report.feasible_count} / {report.n_evaluations}")
    print(f"  unique optimum: {report.is_unique_optimum()}")
    print(f"  report: {path}")
    return EXIT_OK


def cmd_estimate_power(args) -> int:
    cfg = _load(args)
    try:
        space = load_space(cfg.path(cfg.space))
        table = read_latency_table(args.table or cfg.path(cfg.latency.table))
    except (SpaceError, LatencyError) as exc:
        raise ConfigError(str(exc)) from exc
    devices = args.device or list(table.devices)
    rows = []
    for device in devices:
        pi = estimate_power_from_table(table, space, device)
        rows.append({"device_id": device, "gflops": pi})
        print(f"{device}: {pi:.4f} GFLOPS")
    out_dir = Path(args.out or cfg.out or "runs")
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "device_power.csv", rows, ["device_id", "gflops"])
    return EXIT_OK


def eval_rows(run_dir: Path, overrides: list[str] | None = None) -> tuple[list[dict], list[str]]:
    """Re-evaluate a finished run under overridden link / threshold settings."""
    run_dir = Path(run_dir)
    if not (run_dir / "result.json").exists():
        raise ConfigError(f"{run_dir}: no result.json (not a completed run)")
    with open(run_dir / "config.yaml") as fh:
        doc = yaml.safe_load(fh)
    cfg = config_from_dict(apply_overrides(doc, overrides or []), run_dir)
    setup = build(cfg)
    with open(run_dir / "result.json") as fh:
        stored = json.load(fh)
    sample = ArchSample(tuple(stored["sample"]["indices"]), setup.space.sizes)
    model = None
    accuracy = {}
    rates = _rates(setup)
    if setup.supernet_mode:
        ckpt = run_dir / "model.npz"
        if not ckpt.exists():
            raise ConfigError(f"{run_dir}: missing checkpoint model.npz")
        model = ToySupernet(setup.space, setup.data.n_classes, inverted_dropout=setup.train.inverted_dropout)
        model.load(ckpt)
        for p in rates:
            _, acc = evaluate(model, sample, p, setup.data.X_test, setup.data.y_test, setup.train.eval_draws,
                              _retrain_seed(stored["seed"]))
            accuracy[f"{p:g}"] = acc
    b = final_breakdown(setup, sample, model)
    return [report_row(stored["method"], stored["seed"], accuracy, b, rates)], result_columns(rates)


def _retrain_seed(seed: int) -> int:
    return seed_streams(seed)["retrain"]


def cmd_eval(args) -> int:
    rows, columns = eval_rows(Path(args.run_dir), args.override)
    out = Path(args.out) if args.out else Path(args.run_dir) / "eval.csv"
    _write_csv(out, rows, columns)
    w = csv.DictWriter(sys.stdout, fieldnames=columns)
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    return EXIT_OK


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitnas", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, help="run configuration (YAML)")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="dotted config override, e.g. link.throughput_bps=4e6 (repeatable)")

    p = sub.add_parser("search", help="joint architecture and split-point search")
    common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("baseline", help="hardware-aware NAS, then split selection and re-training")
    common(p)
    p.add_argument("--variant", default="with-dropout",
                   choices=["with-dropout", "without-dropout", "with_dropout", "without_dropout", "both"])
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("oracle", help="exhaustive enumeration of a small space")
    common(p, seed=False)
    p.add_argument("--cap", type=int, default=10**5)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("estimate-power", help="fit device computation power from a latency table")
    common(p, seed=False)
    p.add_argument("--table", default=None, help="latency table CSV (defaults to the config's)")
    p.add_argument("--device", action="append", help="device id (repeatable; default: all in the table)")
    p.set_defaults(func=cmd_estimate_power)

    p = sub.add_parser("eval", help="re-evaluate a finished run under overridden settings")
    p.add_argument("run_dir")
    p.add_argument("--out", default=None)
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpaceTooLarge) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingDiverged, UpdateAborted, LatencyError, SpaceError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
