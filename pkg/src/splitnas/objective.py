"""Penalized split-computing objective and the evaluator contract.

combined = eps_loss * l_sc + eps_lat * max(0, T - T_th), where l_sc is the
loss averaged over a set of packet-loss (dropout) rates at the split point.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import yaml

from .latency import LatencyBreakdown, LatencyModel, penalty
from .space import ArchSample, SearchSpaceSpec, intermediate_size

__all__ = [
    "DEFAULT_DROPOUT_SET",
    "ObjectiveConfig",
    "ObjectiveBreakdown",
    "Evaluator",
    "l_sc",
    "nasc_objective",
    "TabularEvaluator",
    "tabular_evaluator",
    "load_surrogate",
]

DEFAULT_DROPOUT_SET = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class ObjectiveConfig:
    eps_loss: float = 1.0
    eps_lat: float = 1.0
    T_th: float = 30.0
    dropout_set: tuple[float, ...] = DEFAULT_DROPOUT_SET
    train_dropout_rate: float = 0.5

    def __post_init__(self):
        if self.eps_loss < 0 or self.eps_lat < 0:
            raise ValueError("objective weights must be >= 0")
        if not self.dropout_set:
            raise ValueError("dropout set must be non-empty")
        for p in (*self.dropout_set, self.train_dropout_rate):
            if not 0 <= p < 1:
                raise ValueError(f"dropout rate {p} outside [0, 1)")


@dataclass(frozen=True)
class ObjectiveBreakdown:
    loss: float
    latency: LatencyBreakdown
    tau: float
    combined: float

    @property
    def T(self) -> float:
        return self.latency.total

    def as_dict(self) -> dict:
        return {
            "loss": self.loss,
            "T": self.T,
            "T_head": self.latency.head,
            "T_comm": self.latency.comm,
            "T_tail": self.latency.tail,
            "n_h": self.latency.n_h,
            "tau": self.tau,
            "combined": self.combined,
        }


class Evaluator(Protocol):
    """Loss of a sample with dropout rate ``p`` at its split point.

    Same (sample, p, batch, seed) must give the same loss, and evaluation must
    not mutate shared state.
    """

    def eval_loss(self, sample: ArchSample, p: float, batch=None, seed: int = 0) -> float: ...


def l_sc(evaluator: Evaluator, sample: ArchSample, P: Sequence[float], batch=None, seed: int = 0) -> float:
    """Mean loss over dropout rates; one batch and base seed for every rate."""
    if not P:
        raise ValueError("dropout set must be non-empty")
    return float(sum(evaluator.eval_loss(sample, p, batch, seed) for p in P) / len(P))


def nasc_objective(
    evaluator: Evaluator,
    sample: ArchSample,
    space: SearchSpaceSpec,
    latency_model: LatencyModel,
    config: ObjectiveConfig,
    batch=None,
    seed: int = 0,
) -> ObjectiveBreakdown:
    loss = l_sc(evaluator, sample, config.dropout_set, batch, seed)
    lat = latency_model.end_to_end(sample, space)
    tau = penalty(lat.total, config.T_th)
    return ObjectiveBreakdown(
        loss=loss,
        latency=lat,
        tau=tau,
        combined=config.eps_loss * loss + config.eps_lat * tau,
    )


@dataclass(frozen=True)
class TabularEvaluator:
    """Synthetic desk-scale loss surrogate (not a trained-model accuracy).

    loss(sample, p) = sum of per-layer block scores + split term
                      + g(p) * sensitivity(sample),
    with g(p) = scale * p**power and sensitivity = coef / n_h.
    """

    space: SearchSpaceSpec
    layer_scores: tuple[tuple[float, ...], ...]
    split_scores: tuple[float, ...]
    degradation_scale: float = 0.0
    degradation_power: float = 1.0
    sensitivity_coef: float = 0.0

    def __post_init__(self):
        if tuple(len(s) for s in self.layer_scores) != self.space.arch_sizes:
            raise ValueError("layer_scores must have one score per candidate of each layer")
        if len(self.split_scores) != len(self.space.split_candidates):
            raise ValueError("split_scores must have one entry per split candidate")
        if self.degradation_scale < 0 or self.degradation_power <= 0:
            raise ValueError("degradation curve must be non-decreasing with g(0) = 0")

    def base(self, sample: ArchSample) -> float:
        """Architecture-only samples (no split) get the layer scores alone."""
        expected = self.space.sizes if sample.has_split else self.space.arch_sizes
        if tuple(sample.sizes) != expected:
            raise KeyError(f"sample {sample.indices} does not belong to space {self.space.name!r}")
        total = sum(self.layer_scores[d][c] for d, c in enumerate(sample.layer_choices))
        return total + (self.split_scores[sample.split] if sample.has_split else 0.0)

    def g(self, p: float) -> float:
        return self.degradation_scale * p**self.degradation_power

    def sensitivity(self, sample: ArchSample) -> float:
        if self.sensitivity_coef == 0 or not sample.has_split:
            return 0.0
        return self.sensitivity_coef / intermediate_size(sample, self.space)

    def eval_loss(self, sample: ArchSample, p: float, batch=None, seed: int = 0) -> float:
        return self.base(sample) + self.g(p) * self.sensitivity(sample)


def tabular_evaluator(space: SearchSpaceSpec, table_spec: dict) -> TabularEvaluator:
    deg = table_spec.get("degradation", {})
    return TabularEvaluator(
        space=space,
        layer_scores=tuple(tuple(float(v) for v in row) for row in table_spec["layer_scores"]),
        split_scores=tuple(float(v) for v in table_spec["split_scores"]),
        degradation_scale=float(deg.get("scale", 0.0)),
        degradation_power=float(deg.get("power", 1.0)),
        sensitivity_coef=float(table_spec.get("sensitivity_coef", 0.0)),
    )


def load_surrogate(path: str | Path, space: SearchSpaceSpec) -> TabularEvaluator:
    with open(path) as fh:
        return tabular_evaluator(space, yaml.safe_load(fh))
