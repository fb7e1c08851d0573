"""How often does the distribution update end on the brute-force optimum?

Runs the joint search on the bundled tabular demo for a range of seeds and
compares most_likely(theta) at the end of each run with the exhaustive
optimum.  Extra ``--override`` flags (e.g. ``search.theta_min=0.02``) allow
sensitivity studies.

    python scripts/oracle_convergence.py --seeds 0 20
"""
from __future__ import annotations

import argparse
from collections import Counter

import numpy as np

from splitnas.config import load_config
from splitnas.experiment import build, run_nasc
from splitnas.oracle import enumerate_optimum
from splitnas.space import ArchSample, bundled_path, decode


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--config", default=str(bundled_path("configs/demo_tabular.yaml")))
    parser.add_argument("--seeds", type=int, nargs=2, default=[0, 20], metavar=("FIRST", "STOP"))
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--tail", type=int, default=500, help="iterations used for the occupancy statistic")
    args = parser.parse_args()

    setup = build(load_config(args.config, args.override))
    report = enumerate_optimum(setup.space, setup.surrogate, setup.latency_model, setup.objective)
    best = report.best
    print(f"optimum: {decode(best, setup.space).describe()}  combined = {report.best_objective:.6f}")

    misses: Counter = Counter()
    occupancy = []
    seeds = range(*args.seeds)
    for seed in seeds:
        out = run_nasc(setup, seed)
        ids = np.array([row["argmax_id"] for row in out.search.trace[-args.tail:]])
        occupancy.append(float(np.mean(ids == best.sample_id())))
        if out.sample != best:
            misses[out.sample.indices] += 1
    hits = len(seeds) - sum(misses.values())
    print(f"final most_likely equals the optimum in {hits}/{len(seeds)} runs")
    print(f"mean share of the last {args.tail} iterations spent at the optimum: {np.mean(occupancy):.2f}")
    for indices, n in misses.most_common():
        b = report.ranking[ArchSample(indices, setup.space.sizes).sample_id()]
        print(f"  {n} x {indices}  combined = {b.combined:.4f}")


if __name__ == "__main__":
    main()
