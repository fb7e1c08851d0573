"""Sequential hardware-aware NAS baseline.

The baseline searches an architecture as if the whole model ran on the end
device with no packet loss, then picks the split point that minimizes the
split-computing objective for that fixed architecture, and finally re-trains
with or without dropout at the split.  Communication never enters the search.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import categorical as cat
from .asng import AsngConfig, UpdateResult, run_distribution_update
from .latency import LatencyModel, penalty
from .objective import Evaluator, ObjectiveBreakdown, ObjectiveConfig, nasc_objective
from .space import ArchSample, SearchSpaceSpec

__all__ = [
    "VARIANTS",
    "BaselineConfig",
    "HwnasValue",
    "hwnas_objective",
    "hwnas_search",
    "split_point_opt",
    "BaselineResult",
    "run_baseline",
]

VARIANTS = ("with_dropout", "without_dropout")


@dataclass(frozen=True)
class BaselineConfig:
    variant: str
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout rate must lie in [0, 1)")

    @property
    def retrain_p(self) -> float:
        return self.dropout_rate if self.variant == "with_dropout" else 0.0


@dataclass(frozen=True)
class HwnasValue:
    loss: float
    T_device: float
    tau: float
    combined: float


def hwnas_objective(
    evaluator: Evaluator,
    arch: ArchSample,
    space: SearchSpaceSpec,
    latency_model: LatencyModel,
    config: ObjectiveConfig,
    device: str | None = None,
    batch=None,
    seed: int = 0,
) -> HwnasValue:
    """Loss without packet loss plus the penalty on whole-model on-device latency."""
    if arch.has_split:
        raise ValueError("the baseline search works on architecture-only samples")
    loss = evaluator.eval_loss(arch, 0.0, batch, seed)
    T = latency_model.on_device(arch.layer_choices, space, device)
    tau = penalty(T, config.T_th)
    return HwnasValue(loss, T, tau, config.eps_loss * loss + config.eps_lat * tau)


def hwnas_search(
    space: SearchSpaceSpec,
    evaluator: Evaluator,
    latency_model: LatencyModel,
    config: ObjectiveConfig,
    budget: int,
    rng: np.random.Generator,
    asng_config: AsngConfig = AsngConfig(),
    device: str | None = None,
    batch_fn: Callable[[int], object] | None = None,
    keep_history: bool = False,
    theta_min=None,
) -> tuple[ArchSample, UpdateResult]:
    """Distribution update over the architecture dimensions only."""
    theta = cat.init_uniform(space.arch_sizes, has_split=False)

    def evaluate(samples: Sequence[ArchSample], t: int) -> list[float]:
        batch = batch_fn(t) if batch_fn else None
        return [
            hwnas_objective(evaluator, a, space, latency_model, config, device, batch, seed=t).combined
            for a in samples
        ]

    result = run_distribution_update(theta, evaluate, budget, rng, asng_config, theta_min, keep_history)
    return cat.most_likely(result.theta), result


def split_point_opt(
    arch: ArchSample,
    space: SearchSpaceSpec,
    evaluator: Evaluator,
    latency_model: LatencyModel,
    config: ObjectiveConfig,
    batch=None,
    seed: int = 0,
) -> tuple[ArchSample, list[ObjectiveBreakdown]]:
    """Exhaustive scan of split positions for a fixed architecture; ties go to the earliest."""
    n = len(space.split_candidates)
    scan = []
    best_k, best = 0, None
    for k in range(n):
        b = nasc_objective(evaluator, arch.with_split(k, n), space, latency_model, config, batch, seed)
        scan.append(b)
        if best is None or b.combined < best.combined:
            best_k, best = k, b
    return arch.with_split(best_k, n), scan


@dataclass
class BaselineResult:
    variant: str
    sample: ArchSample
    breakdown: ObjectiveBreakdown
    split_scan: list[ObjectiveBreakdown]
    search: UpdateResult
    retrained: object = None
    metrics: dict = field(default_factory=dict)


def run_baseline(
    space: SearchSpaceSpec,
    evaluator: Evaluator,
    latency_model: LatencyModel,
    config: ObjectiveConfig,
    baseline: BaselineConfig,
    budget: int,
    rng: np.random.Generator,
    asng_config: AsngConfig = AsngConfig(),
    batch_fn: Callable[[int], object] | None = None,
    split_batch=None,
    retrain_fn: Callable[[ArchSample, float], tuple[object, dict]] | None = None,
) -> BaselineResult:
    """Search, split, then (optionally) re-train.

    ``retrain_fn(sample, p_train)`` returns ``(model, metrics)``; without it the
    run stops after split selection, as in tabular mode.
    """
    arch, search = hwnas_search(space, evaluator, latency_model, config, budget, rng, asng_config, batch_fn=batch_fn)
    sample, scan = split_point_opt(arch, space, evaluator, latency_model, config, split_batch)
    result = BaselineResult(baseline.variant, sample, scan[sample.split], scan, search)
    if retrain_fn is not None:
        result.retrained, result.metrics = retrain_fn(sample, baseline.retrain_p)
    return result
