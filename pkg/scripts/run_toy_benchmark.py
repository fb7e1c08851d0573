"""Compare NASC against the sequential baseline on the bundled toy benchmark.

Writes one CSV row per (method, seed) and prints the aggregate latency and
accuracy comparison at the configured packet-loss rate.

    python scripts/run_toy_benchmark.py --seeds 0 1 2 3 4 --out runs/toy_benchmark.csv
"""
from __future__ import annotations

import argparse
import csv
import time
from pathlib import Path

from splitnas.config import load_config
from splitnas.experiment import build, compare_protocols, summarize_comparison
from splitnas.space import bundled_path


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--config", default=str(bundled_path("configs/toy_nasc.yaml")))
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--out", default="runs/toy_benchmark.csv")
    args = parser.parse_args()

    setup = build(load_config(args.config, args.override))
    p = setup.config.link.loss_prob
    acc = f"acc@{p:g}"
    t0 = time.perf_counter()

    def show(row):
        print(f"seed {row['seed']:>3}  {row['method']:<24} T = {row['T']:7.3f} ms  {acc} = {row[acc]:.4f}  "
              f"[{row['sample']}]", flush=True)

    rows = compare_protocols(setup, args.seeds, log_fn=show)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)

    T_th = setup.objective.T_th
    s = summarize_comparison(rows, T_th, p)
    print(f"\nT_th = {T_th:g} ms, p = {p:g}, {s.n_seeds} seeds, {time.perf_counter() - t0:.0f} s")
    print(f"NASC seeds with T <= T_th:      {s.nasc_feasible}/{s.n_seeds}")
    print(f"baseline seeds with T > T_th:   {s.baseline_infeasible}/{s.n_seeds}")
    print(f"median T: NASC {s.median_T_nasc:.3f} ms, baseline {s.median_T_baseline:.3f} ms "
          f"({100 * s.latency_reduction:.1f}% lower)")
    print(f"median {acc}: NASC {s.median_acc_nasc:.4f}, baseline {s.median_acc_baseline:.4f} "
          f"(NASC minus baseline {s.accuracy_gap_pp:+.2f} pp)")
    print(f"baseline with dropout beats without: {s.dropout_wins}/{s.n_seeds}")
    print(f"rows written to {out}")


if __name__ == "__main__":
    main()
