"""Exhaustive ground truth for small spaces."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .latency import LatencyModel
from .objective import Evaluator, ObjectiveBreakdown, ObjectiveConfig, nasc_objective
from .space import ArchSample, SearchSpaceSpec, cardinality, decode, iter_samples

DEFAULT_CAP = 10**5


class SpaceTooLarge(ValueError):
    pass


@dataclass
class OracleReport:
    best: ArchSample
    best_objective: float
    ranking: dict[int, ObjectiveBreakdown]
    feasible_count: int
    n_evaluations: int

    def ordered(self) -> list[tuple[int, ObjectiveBreakdown]]:
        """Ascending objective, ties by sample id."""
        return sorted(self.ranking.items(), key=lambda kv: (kv[1].combined, kv[0]))

    def is_unique_optimum(self) -> bool:
        ranked = self.ordered()
        return len(ranked) < 2 or ranked[1][1].combined > ranked[0][1].combined


def enumerate_optimum(
    space: SearchSpaceSpec,
    evaluator: Evaluator,
    latency_model: LatencyModel,
    config: ObjectiveConfig,
    cap: int = DEFAULT_CAP,
) -> OracleReport:
    n = cardinality(space)
    if n > cap:
        raise SpaceTooLarge(f"space has {n} members, above the enumeration cap of {cap}")
    ranking = {}
    for s in iter_samples(space):
        ranking[s.sample_id()] = nasc_objective(evaluator, s, space, latency_model, config)
    return _report(ranking, space, config)


def merge_reports(parts: list[dict[int, ObjectiveBreakdown]], space: SearchSpaceSpec, config: ObjectiveConfig) -> OracleReport:
    """Combine partial rankings from partitioned enumeration."""
    ranking = {}
    for part in parts:
        ranking.update(part)
    return _report(ranking, space, config)


def _report(ranking: dict[int, ObjectiveBreakdown], space: SearchSpaceSpec, config: ObjectiveConfig) -> OracleReport:
    best_id = min(ranking, key=lambda sid: (ranking[sid].combined, sid))
    return OracleReport(
        best=ArchSample.from_id(best_id, space.sizes),
        best_objective=ranking[best_id].combined,
        ranking=ranking,
        feasible_count=sum(1 for b in ranking.values() if b.T <= config.T_th),
        n_evaluations=len(ranking),
    )


REPORT_COLUMNS = ("sample_id", "blocks", "split", "loss", "T", "tau", "combined")


def export_report(report: OracleReport, space: SearchSpaceSpec, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for sid, b in report.ordered():
            net = decode(ArchSample.from_id(sid, space.sizes), space)
            w.writerow([sid, " ".join(net.blocks), net.split, repr(b.loss), repr(b.T), repr(b.tau), repr(b.combined)])
