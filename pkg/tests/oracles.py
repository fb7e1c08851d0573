"""Independent numeric references used by the tests.

They recompute quantities from first principles (finite differences, dense
matrices, exhaustive enumeration) rather than through the package's closed
forms.
"""
from __future__ import annotations

import itertools

import numpy as np


def log_prob_minimal(eta: list[np.ndarray], a: tuple[int, ...]) -> float:
    """log P(a) in the minimal parameterization: each dimension keeps K-1 free
    probabilities and the last one is 1 - sum."""
    total = 0.0
    for e, k in zip(eta, a):
        last = 1.0 - e.sum()
        total += np.log(e[k]) if k < len(e) else np.log(last)
    return total


def score_fd(eta: list[np.ndarray], a: tuple[int, ...], rel_step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of log P(a) w.r.t. the flattened eta."""
    flat = np.concatenate(eta)
    sizes = [len(e) for e in eta]
    grad = np.zeros_like(flat)
    for i in range(len(flat)):
        d = np.searchsorted(np.cumsum(sizes), i, side="right")
        e_d = np.split(flat, np.cumsum(sizes)[:-1])[d]
        h = rel_step * min(flat[i], 1.0 - e_d.sum())
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        split = lambda v: np.split(v, np.cumsum(sizes)[:-1])  # noqa: E731
        grad[i] = (log_prob_minimal(split(up), a) - log_prob_minimal(split(dn), a)) / (2 * h)
    return grad


def fisher_by_enumeration(eta: list[np.ndarray]) -> np.ndarray:
    """E[score score^T] over every joint outcome, with finite-difference scores."""
    sizes = [len(e) + 1 for e in eta]
    n = sum(len(e) for e in eta)
    F = np.zeros((n, n))
    for a in itertools.product(*(range(k) for k in sizes)):
        p = np.exp(log_prob_minimal(eta, a))
        g = score_fd(eta, a)
        F += p * np.outer(g, g)
    return F


def natural_gradient_minimal(theta: list[np.ndarray], a: tuple[int, ...]) -> np.ndarray:
    """F^{-1} grad log P(a) in the minimal coordinates, all parts numeric."""
    eta = [t[:-1].copy() for t in theta]
    F = fisher_by_enumeration(eta)
    return np.linalg.solve(F, score_fd(eta, a))


def natural_gradient_diag_metric(theta: list[np.ndarray], a: tuple[int, ...]) -> np.ndarray:
    """Riemannian gradient of log P(a) under diag(1/theta) on the product of
    simplices, from a finite-difference Euclidean gradient in the redundant
    coordinates: r = theta*g - (theta.g) theta per dimension."""
    out = []
    for t, k in zip(theta, a):
        g = np.zeros(len(t))
        for j in range(len(t)):
            h = 1e-5 * t[j]
            lp = lambda v: np.log(v[k])  # noqa: E731
            up, dn = t.copy(), t.copy()
            up[j] += h
            dn[j] -= h
            g[j] = (lp(up) - lp(dn)) / (2 * h)
        out.append(t * g - (t @ g) * t)
    return np.concatenate(out)


def golden_section(f, lo: float, hi: float, tol: float = 1e-14, max_iter: int = 500) -> float:
    invphi = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2


def relative_error(x, ref) -> float:
    x, ref = np.asarray(x, float), np.asarray(ref, float)
    return float(np.max(np.abs(x - ref)) / max(np.max(np.abs(ref)), 1e-300))


def supernet_grad_error(net, sample, X, y, mask, rng, per_key: int = 4, h: float = 1e-6) -> float:
    """Max relative gap between backward() and central differences of forward()
    over a few random entries of every parameter the sample touches; the
    dropout mask is held fixed across perturbations."""
    _, cache = net.forward(sample, X, y, mask=mask)
    grads = net.backward(cache)
    worst = 0.0
    for key, g in grads.items():
        for f in rng.choice(g.size, size=min(per_key, g.size), replace=False):
            idx = np.unravel_index(f, g.shape)
            if key in net.masks and net.masks[key][idx] == 0:
                # structurally absent weight of a grouped convolution
                worst = max(worst, abs(float(g[idx])))
                continue
            old = net.params[key][idx]
            net.params[key][idx] = old + h
            lp, _ = net.forward(sample, X, y, mask=mask)
            net.params[key][idx] = old - h
            lm, _ = net.forward(sample, X, y, mask=mask)
            net.params[key][idx] = old
            num = (lp - lm) / (2 * h)
            worst = max(worst, abs(num - g[idx]) / max(1.0, abs(num), abs(g[idx])))
    return worst
