"""Adaptive stochastic natural-gradient update of the categorical parameters.

Only the two-sample configuration is supported: the better of the two samples
gets utility +2, the worse -2, ties 0.  The step size is a trust region of
radius ``delta`` in the Fisher metric; ``delta`` is adapted from an
accumulated, normalized gradient direction ``s`` and its expected squared
norm ``gamma``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import categorical as cat
from .categorical import DistributionParams
from .space import ArchSample

log = logging.getLogger(__name__)

__all__ = [
    "AsngConfig",
    "AsngState",
    "StepInfo",
    "utilities",
    "theta_gradient",
    "init_state",
    "step",
    "run_distribution_update",
    "UpdateResult",
    "UpdateAborted",
]


@dataclass(frozen=True)
class AsngConfig:
    alpha: float = 1.5
    delta_init: float = 1.0
    lam_theta: int = 2
    delta_max: float = 1000.0
    omit_last: bool = True  # count n_theta = sum(K_d - 1), without the redundant last category

    def __post_init__(self):
        if self.lam_theta != 2:
            raise ValueError("only lam_theta = 2 is supported")
        if self.alpha <= 0 or self.delta_init <= 0 or self.delta_max <= 0:
            raise ValueError("alpha, delta_init and delta_max must be positive")


@dataclass(frozen=True)
class AsngState:
    delta: float
    gamma: float
    s: np.ndarray
    t: int
    config: AsngConfig
    theta_min: np.ndarray

    @property
    def n_theta(self) -> int:
        return len(self.s) - (len(self.theta_min) if self.config.omit_last else 0)

    @property
    def delta_floor(self) -> float:
        # keeps beta <= 1 so sqrt(beta * (2 - beta)) stays real
        return self.config.delta_init / math.sqrt(self.n_theta)


@dataclass(frozen=True)
class StepInfo:
    objectives: tuple[float, ...]
    utilities: tuple[float, ...]
    eps: float
    delta: float
    gamma: float
    s_norm2: float
    degenerate: bool


def init_state(theta: DistributionParams, config: AsngConfig = AsngConfig(), theta_min=None) -> AsngState:
    if theta_min is None:
        theta_min = cat.default_theta_min(theta.sizes)
    return AsngState(
        delta=1.0,
        gamma=0.0,
        s=np.zeros(sum(theta.sizes)),
        t=0,
        config=config,
        theta_min=np.asarray(theta_min, dtype=float),
    )


def utilities(objective_values: Sequence[float]) -> np.ndarray:
    """Rank utilities for a pair under minimization; non-finite values rank worst."""
    if len(objective_values) != 2:
        raise ValueError("utilities are defined for exactly two samples")
    f = np.array([v if np.isfinite(v) else np.inf for v in objective_values], dtype=float)
    if f[0] == f[1]:
        return np.zeros(2)
    return np.where(f == f.min(), 2.0, -2.0)


def theta_gradient(samples: Sequence[ArchSample], utils: Sequence[float], theta: DistributionParams) -> np.ndarray:
    if len(samples) != len(utils):
        raise ValueError("one utility per sample")
    G = np.zeros(sum(theta.sizes))
    for a, u in zip(samples, utils):
        G += u * cat.nat_grad_log(a, theta)
    return G / len(samples)


def step(
    state: AsngState,
    theta: DistributionParams,
    samples: Sequence[ArchSample],
    objective_values: Sequence[float],
) -> tuple[DistributionParams, AsngState, StepInfo]:
    """One distribution update.  Pure: inputs are not modified."""
    cfg = state.config
    delta_theta = cfg.delta_init / state.delta
    beta = delta_theta / math.sqrt(state.n_theta)

    u = utilities(objective_values)
    G = theta_gradient(samples, u, theta)
    gnorm = cat.fisher_norm(G, theta)

    if gnorm == 0.0:
        log.debug("t=%d: zero natural gradient, theta kept", state.t)
        new_theta, s, eps = theta, state.s, 0.0
    else:
        eps = delta_theta / gnorm
        new_theta = cat.project(
            [t + eps * g for t, g in zip(theta.theta, theta.split_flat(G))],
            state.theta_min,
            theta.has_split,
        )
        s = (1 - beta) * state.s + math.sqrt(beta * (2 - beta)) * cat.fisher_sqrt_apply(G, theta) / gnorm
    # (1-b)^2 g + b(2-b), written so that rounding cannot push gamma above 1
    gamma = 1.0 - (1 - beta) ** 2 * (1.0 - state.gamma)
    s_norm2 = float(s @ s)
    delta = min(cfg.delta_max, state.delta * math.exp(beta * (gamma - s_norm2 / cfg.alpha)))
    delta = max(delta, state.delta_floor)

    new_state = replace(state, delta=delta, gamma=gamma, s=s, t=state.t + 1)
    info = StepInfo(
        objectives=tuple(float(v) for v in objective_values),
        utilities=tuple(float(v) for v in u),
        eps=eps,
        delta=delta,
        gamma=gamma,
        s_norm2=s_norm2,
        degenerate=gnorm == 0.0,
    )
    return new_theta, new_state, info


@dataclass
class UpdateResult:
    theta: DistributionParams
    state: AsngState
    trace: list[dict] = field(default_factory=list)
    theta_history: list[DistributionParams] = field(default_factory=list)


class UpdateAborted(RuntimeError):
    """Evaluator failed mid-run; ``partial`` holds the trace so far."""

    def __init__(self, message: str, partial: UpdateResult):
        super().__init__(message)
        self.partial = partial


def run_distribution_update(
    theta: DistributionParams,
    evaluate: Callable[[Sequence[ArchSample], int], Sequence[float]],
    budget: int,
    rng: np.random.Generator,
    config: AsngConfig = AsngConfig(),
    theta_min=None,
    keep_history: bool = False,
    callback: Callable[[int, DistributionParams, StepInfo], None] | None = None,
) -> UpdateResult:
    """Run ``budget`` distribution-update iterations.

    ``evaluate(samples, t)`` returns one objective value per sample; the
    iteration index lets minibatch evaluators rotate through their data.
    """
    state = init_state(theta, config, theta_min)
    result = UpdateResult(theta=theta, state=state)
    for t in range(budget):
        samples = cat.sample(theta, rng, config.lam_theta)
        try:
            values = evaluate(samples, t)
        except Exception as exc:
            result.theta, result.state = theta, state
            raise UpdateAborted(f"evaluator failed at iteration {t}: {exc}", result) from exc
        theta, state, info = step(state, theta, samples, values)
        best = cat.most_likely(theta)
        result.trace.append(
            {
                "t": t,
                "f0": info.objectives[0],
                "f1": info.objectives[1],
                "u0": info.utilities[0],
                "u1": info.utilities[1],
                "eps": info.eps,
                "delta": info.delta,
                "gamma": info.gamma,
                "s_norm2": info.s_norm2,
                "argmax_id": best.sample_id(),
            }
        )
        if keep_history:
            result.theta_history.append(theta)
        if callback is not None:
            callback(t, theta, info)
    result.theta = theta
    result.state = state
    return result
