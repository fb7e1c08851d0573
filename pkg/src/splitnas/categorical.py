"""Product of independent categorical distributions over the joint domain.

Parameters are kept in the redundant parameterization (every category has a
probability, each dimension sums to one).  The Fisher metric is the diagonal
``diag(1/theta)`` restricted to the simplex tangent space, under which the
natural gradient of ``log P(a)`` is simply ``a - theta``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .space import ArchSample

__all__ = [
    "DistributionParams",
    "init_uniform",
    "sample",
    "most_likely",
    "nat_grad_log",
    "fisher_norm",
    "fisher_sqrt_apply",
    "project",
    "default_theta_min",
]


@dataclass(frozen=True)
class DistributionParams:
    theta: tuple[np.ndarray, ...]
    has_split: bool = True

    def __post_init__(self):
        for d, t in enumerate(self.theta):
            t.setflags(write=False)
            if abs(t.sum() - 1.0) > 1e-9:
                raise ValueError(f"theta[{d}] sums to {t.sum()!r}, not 1")

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(t) for t in self.theta)

    @property
    def n_dims(self) -> int:
        return len(self.theta)

    def n_theta(self, omit_last: bool = False) -> int:
        n = sum(self.sizes)
        return n - self.n_dims if omit_last else n

    def flat(self) -> np.ndarray:
        return np.concatenate(self.theta)

    def split_flat(self, vec: np.ndarray) -> list[np.ndarray]:
        return np.split(np.asarray(vec, dtype=float), np.cumsum(self.sizes)[:-1])

    @classmethod
    def from_flat(cls, vec, sizes: Sequence[int], has_split: bool = True) -> "DistributionParams":
        parts = np.split(np.array(vec, dtype=float), np.cumsum(sizes)[:-1])
        return cls(tuple(parts), has_split)


def init_uniform(sizes: Sequence[int], has_split: bool = True) -> DistributionParams:
    return DistributionParams(tuple(np.full(k, 1.0 / k) for k in sizes), has_split)


def default_theta_min(sizes: Sequence[int]) -> np.ndarray:
    """Per-dimension floor 1/(D*K_d)."""
    D = len(sizes)
    return np.array([1.0 / (D * k) for k in sizes])


def sample(theta: DistributionParams, rng: np.random.Generator, count: int = 1) -> list[ArchSample]:
    if count < 1:
        raise ValueError("count must be >= 1")
    draws = np.empty((count, theta.n_dims), dtype=int)
    u = rng.random((count, theta.n_dims))
    for d, t in enumerate(theta.theta):
        cdf = np.cumsum(t)
        cdf[-1] = 1.0
        draws[:, d] = np.searchsorted(cdf, u[:, d], side="right")
    return [ArchSample(tuple(int(v) for v in row), theta.sizes, theta.has_split) for row in draws]


def most_likely(theta: DistributionParams) -> ArchSample:
    # np.argmax returns the first maximum, i.e. lowest index on ties
    idx = tuple(int(np.argmax(t)) for t in theta.theta)
    return ArchSample(idx, theta.sizes, theta.has_split)


def nat_grad_log(a: ArchSample, theta: DistributionParams) -> np.ndarray:
    if tuple(a.sizes) != theta.sizes:
        raise ValueError(f"sample sizes {a.sizes} != theta sizes {theta.sizes}")
    return a.flat() - theta.flat()


def fisher_norm(G: np.ndarray, theta: DistributionParams) -> float:
    """sqrt(sum G^2 / theta).  Zero means a degenerate gradient; callers skip the step."""
    t = theta.flat()
    if np.any(t <= 0):
        raise ValueError("fisher_norm needs strictly positive theta")
    return float(np.sqrt(np.sum(np.asarray(G) ** 2 / t)))


def fisher_sqrt_apply(G: np.ndarray, theta: DistributionParams) -> np.ndarray:
    return np.asarray(G) / np.sqrt(theta.flat())


def _project_dim(t: np.ndarray, floor: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.min() >= floor and abs(t.sum() - 1.0) <= 1e-12:
        return t.copy()
    clipped = np.zeros(len(t), dtype=bool)
    out = t.copy()
    for _ in range(len(t) + 1):
        newly = (~clipped) & (out < floor)
        clipped |= newly
        if clipped.all():
            return np.full(len(t), 1.0 / len(t))
        free_mass = 1.0 - floor * clipped.sum()
        free = out[~clipped]
        total = free.sum()
        out = np.where(clipped, floor, out)
        out[~clipped] = free * (free_mass / total)
        if not newly.any() and out[~clipped].min() >= floor:
            break
    # absorb rounding so the dimension sums to 1 to machine precision
    j = int(np.argmax(np.where(clipped, -np.inf, out)))
    out[j] += 1.0 - out.sum()
    return out


def project(theta_vecs: Sequence[np.ndarray], theta_min: Sequence[float], has_split: bool = True) -> DistributionParams:
    """Clip each dimension at its floor and redistribute the surplus proportionally."""
    parts = []
    for d, (t, floor) in enumerate(zip(theta_vecs, theta_min)):
        if len(t) * floor > 1.0 + 1e-15:
            raise ValueError(
                f"infeasible floor for dimension {d}: {len(t)} * {floor} > 1"
            )
        parts.append(_project_dim(t, floor))
    return DistributionParams(tuple(parts), has_split)
