"""Desk-scale one-shot supernet with manual forward/backward passes.

Every searchable layer holds one weight set per candidate block.  A block is
the dense analogue of an inverted-residual block on a 1x1 feature map:

    h1 = relu(W1 x + b1)          # 1x1 expansion (grouped)
    h2 = relu(dw * h1 + bdw)      # KxK depthwise on 1x1 reduces to a per-channel affine
    y  = W3 h2 + b3 (+ x)         # 1x1 projection, residual when shapes match

Bottleneck blocks (``split_after_depthwise``) drop the residual and, when they
sit at the split, transmit ``h2``.  Packet loss is emulated by zeroing each
transmitted element with probability ``p``; by default there is no
1/(1-p) rescaling, since dropped packets are simply missing.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .space import ArchSample, SearchSpaceSpec, SpaceError

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "ToyTaskConfig",
    "ToyData",
    "make_toy_task",
    "ToySupernet",
    "SupernetEvaluator",
    "TrainingDiverged",
    "pretrain",
    "retrain",
    "evaluate",
    "sgd_step",
]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    pretrain_epochs: int = 30
    search_epochs: int = 90
    retrain_epochs: int = 300
    val_batch_size: int = 100
    eval_draws: int = 8
    lam_x: int = 2
    inverted_dropout: bool = False
    init_scale: float = 1.0
    clip_norm: float = 5.0  # global gradient-norm clip per step; 0 disables

    def __post_init__(self):
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be >= 0")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError("lr must be >= 0 and momentum in [0, 1)")
        for name in ("batch_size", "val_batch_size", "eval_draws", "lam_x"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("pretrain_epochs", "search_epochs", "retrain_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


# ----------------------------------------------------------------------------
# synthetic task
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyTaskConfig:
    n_features: int = 16
    latent_dim: int = 14
    n_classes: int = 10
    teacher_width: int = 32
    n_train: int = 4000
    n_val: int = 1000
    n_test: int = 2000
    noise: float = 0.1
    seed: int = 1234


@dataclass
class ToyData:
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    n_classes: int

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return getattr(self, f"X_{name}"), getattr(self, f"y_{name}")


def make_toy_task(cfg: ToyTaskConfig = ToyTaskConfig()) -> ToyData:
    """Labels come from a random tanh teacher on a low-dimensional latent; inputs
    are a noisy linear embedding of that latent."""
    rng = np.random.default_rng(cfg.seed)
    T1 = rng.normal(size=(cfg.latent_dim, cfg.teacher_width)) * 1.5 / np.sqrt(cfg.latent_dim)
    c1 = rng.normal(size=cfg.teacher_width) * 0.5
    T2 = rng.normal(size=(cfg.teacher_width, cfg.n_classes)) * 3.0 / np.sqrt(cfg.teacher_width)
    A = rng.normal(size=(cfg.latent_dim, cfg.n_features)) / np.sqrt(cfg.latent_dim)

    def draw(n):
        z = rng.normal(size=(n, cfg.latent_dim))
        y = np.argmax(np.tanh(z @ T1 + c1) @ T2, axis=1)
        X = z @ A + cfg.noise * rng.normal(size=(n, cfg.n_features))
        return X, y

    Xtr, ytr = draw(cfg.n_train)
    Xva, yva = draw(cfg.n_val)
    Xte, yte = draw(cfg.n_test)
    mu, sd = Xtr.mean(0), Xtr.std(0) + 1e-12
    return ToyData((Xtr - mu) / sd, ytr, (Xva - mu) / sd, yva, (Xte - mu) / sd, yte, cfg.n_classes)


# ----------------------------------------------------------------------------
# network
# ----------------------------------------------------------------------------


def _relu(a):
    return np.maximum(a, 0.0)


_RMS_EPS = 1e-6


def _rms_norm(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale each row to unit root-mean-square (no learned parameters)."""
    r = np.sqrt((z * z).mean(axis=1, keepdims=True) + _RMS_EPS)
    return z / r, r


def _rms_norm_backward(du: np.ndarray, u: np.ndarray, r: np.ndarray) -> np.ndarray:
    return (du - u * (du * u).mean(axis=1, keepdims=True)) / r


def _group_mask(rows: int, cols: int, groups: int) -> np.ndarray | None:
    if groups == 1:
        return None
    m = np.zeros((rows, cols))
    r, c = rows // groups, cols // groups
    for g in range(groups):
        m[g * r : (g + 1) * r, g * c : (g + 1) * c] = 1.0
    return m


class ToySupernet:
    """Weight-sharing supernet over a space whose feature maps are all 1x1."""

    def __init__(self, space: SearchSpaceSpec, n_classes: int, seed: int = 0,
                 inverted_dropout: bool = False, init_scale: float = 1.0):
        if space.input_shape[1:] != (1, 1):
            raise SpaceError("the toy supernet needs 1x1 spatial inputs")
        for layer in space.layers:
            if layer.in_hw != (1, 1) or layer.out_hw != (1, 1):
                raise SpaceError("the toy supernet needs 1x1 feature maps in every layer")
        if len(space.prefix) != 1 or space.prefix[0].kind != "conv":
            raise SpaceError("the toy supernet expects a single stem op as prefix")
        self.space = space
        self.n_classes = n_classes
        self.inverted_dropout = inverted_dropout
        self.masks: dict[str, np.ndarray] = {}
        self.params = self._init_params(np.random.default_rng(seed), init_scale)

    # -- parameters -----------------------------------------------------------

    def _init_params(self, rng, scale) -> dict[str, np.ndarray]:
        def he(rows, cols, gain=2.0):
            return rng.normal(size=(rows, cols)) * scale * np.sqrt(gain / cols)

        sp = self.space
        stem = sp.prefix[0]
        P = {"stem.W": he(stem.out_channels, sp.input_shape[0]), "stem.b": np.zeros(stem.out_channels)}
        for layer in sp.layers:
            cin, cout = layer.in_channels, layer.out_channels
            for bid in layer.candidates:
                blk = sp.blocks[bid]
                pre = f"L{layer.layer_index}.{bid}"
                if blk.is_skip:
                    if not layer.shape_preserving:
                        P[f"{pre}.P"] = he(cout, cin, 1.0)
                    continue
                cmid = blk.mid_channels(cin)
                g = blk.groups
                P[f"{pre}.W1"] = he(cmid, cin // g * 1, 2.0) if g == 1 else he(cmid, cin // g)
                if g > 1:
                    full = np.zeros((cmid, cin))
                    m = _group_mask(cmid, cin, g)
                    full[m > 0] = P[f"{pre}.W1"].ravel()
                    P[f"{pre}.W1"] = full
                    self.masks[f"{pre}.W1"] = m
                P[f"{pre}.b1"] = np.full(cmid, 0.1)
                P[f"{pre}.dw"] = np.ones(cmid) + 0.1 * rng.normal(size=cmid)
                P[f"{pre}.bdw"] = np.full(cmid, 0.1)
                residual = layer.shape_preserving and not blk.split_after_depthwise
                gain = 0.5 if residual else 1.0
                W3 = he(cout, cmid // g, gain)
                if g > 1:
                    full = np.zeros((cout, cmid))
                    m = _group_mask(cout, cmid, g)
                    full[m > 0] = W3.ravel()
                    W3 = full
                    self.masks[f"{pre}.W3"] = m
                P[f"{pre}.W3"] = W3
                P[f"{pre}.b3"] = np.zeros(cout)
        width = sp.layers[-1].out_channels
        P["cls.W"] = he(self.n_classes, width, 1.0)
        P["cls.b"] = np.zeros(self.n_classes)
        return P

    def reinitialize(self, seed: int, init_scale: float = 1.0) -> None:
        self.masks = {}
        self.params = self._init_params(np.random.default_rng(seed), init_scale)

    def copy(self) -> "ToySupernet":
        other = object.__new__(ToySupernet)
        other.space, other.n_classes = self.space, self.n_classes
        other.inverted_dropout = self.inverted_dropout
        other.masks = self.masks
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def active_keys(self, sample: ArchSample) -> list[str]:
        keys = ["stem.W", "stem.b"]
        for layer, c in zip(self.space.layers, sample.layer_choices):
            pre = f"L{layer.layer_index}.{layer.candidates[c]}."
            keys += [k for k in self.params if k.startswith(pre)]
        return keys + ["cls.W", "cls.b"]

    # -- dropout at the split ------------------------------------------------

    def split_width(self, sample: ArchSample) -> int:
        k = sample.split
        if k == 0:
            return self.space.prefix[0].out_channels
        layer = self.space.layers[k - 1]
        blk = self.space.block(k - 1, sample.layer_choices[k - 1])
        return blk.mid_channels(layer.in_channels) if blk.split_after_depthwise else layer.out_channels

    def make_mask(self, sample: ArchSample, n: int, p: float, seed: int = 0) -> np.ndarray | None:
        """Keep-mask for the transmitted tensor; one uniform draw per element so
        that masks for different rates under one seed are nested."""
        if p == 0:
            return None
        u = np.random.default_rng(seed).random((n, self.split_width(sample)))
        m = (u >= p).astype(float)
        if self.inverted_dropout:
            m /= 1.0 - p
        return m

    # -- forward / backward ---------------------------------------------------

    def forward(self, sample: ArchSample, X: np.ndarray, y: np.ndarray, p: float = 0.0,
                seed: int = 0, mask: np.ndarray | None = None):
        """Mean cross-entropy of the sampled subnetwork; returns (loss, cache)."""
        P, sp = self.params, self.space
        if len(sample.layer_choices) != sp.n_layers:
            raise SpaceError("sample does not match the supernet's space")
        k = sample.split
        if k is None and (p > 0 or mask is not None):
            raise SpaceError("dropout needs a split point")
        if mask is None and p > 0:
            mask = self.make_mask(sample, len(X), p, seed)

        a0 = X @ P["stem.W"].T + P["stem.b"]
        z = _relu(a0)
        if k == 0 and mask is not None:
            z = z * mask
        caches = []
        for i, (layer, c) in enumerate(zip(sp.layers, sample.layer_choices)):
            bid = layer.candidates[c]
            blk = sp.blocks[bid]
            pre = f"L{i}.{bid}"
            at_split = k == i + 1
            m = mask if at_split else None
            if blk.is_skip:
                if layer.shape_preserving:
                    out = z
                else:
                    out = z @ P[f"{pre}.P"].T
                if m is not None:
                    out = out * m
                caches.append(("skip", pre, z, m, layer.shape_preserving))
                z = out
                continue
            u, r = _rms_norm(z)
            a1 = u @ P[f"{pre}.W1"].T + P[f"{pre}.b1"]
            h1 = _relu(a1)
            a2 = h1 * P[f"{pre}.dw"] + P[f"{pre}.bdw"]
            h2 = _relu(a2)
            mid_mask = m if blk.split_after_depthwise else None
            end_mask = None if blk.split_after_depthwise else m
            if mid_mask is not None:
                h2 = h2 * mid_mask
            out = h2 @ P[f"{pre}.W3"].T + P[f"{pre}.b3"]
            residual = layer.shape_preserving and not blk.split_after_depthwise
            if residual:
                out = out + z
            if end_mask is not None:
                out = out * end_mask
            caches.append(("block", pre, (u, r), a1, h1, a2, h2, mid_mask, end_mask, residual))
            z = out
        zn, zr = _rms_norm(z)
        logits = zn @ P["cls.W"].T + P["cls.b"]
        logits = logits - logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        n = len(X)
        loss = float(-logp[np.arange(n), y].mean())
        cache = {"X": X, "y": y, "a0": a0, "k": k, "stem_mask": mask if k == 0 else None,
                 "blocks": caches, "z": (zn, zr), "logp": logp}
        return loss, cache

    def backward(self, cache) -> dict[str, np.ndarray]:
        """Gradients for the parameters the cached subnetwork touched (others are absent)."""
        P = self.params
        X, y, logp = cache["X"], cache["y"], cache["logp"]
        n = len(X)
        g = np.exp(logp)
        g[np.arange(n), y] -= 1.0
        g /= n
        zn, zr = cache["z"]
        grads = {"cls.W": g.T @ zn, "cls.b": g.sum(0)}
        dz = _rms_norm_backward(g @ P["cls.W"], zn, zr)
        for entry in reversed(cache["blocks"]):
            if entry[0] == "skip":
                _, pre, z_in, m, identity = entry
                if m is not None:
                    dz = dz * m
                if not identity:
                    grads[f"{pre}.P"] = dz.T @ z_in
                    dz = dz @ P[f"{pre}.P"]
                continue
            _, pre, (u, r), a1, h1, a2, h2, mid_mask, end_mask, residual = entry
            if end_mask is not None:
                dz = dz * end_mask
            dout = dz
            grads[f"{pre}.W3"] = dout.T @ h2
            grads[f"{pre}.b3"] = dout.sum(0)
            dh2 = dout @ P[f"{pre}.W3"]
            if mid_mask is not None:
                dh2 = dh2 * mid_mask
            da2 = dh2 * (a2 > 0)
            grads[f"{pre}.dw"] = (da2 * h1).sum(0)
            grads[f"{pre}.bdw"] = da2.sum(0)
            dh1 = da2 * P[f"{pre}.dw"]
            da1 = dh1 * (a1 > 0)
            grads[f"{pre}.W1"] = da1.T @ u
            grads[f"{pre}.b1"] = da1.sum(0)
            dz = _rms_norm_backward(da1 @ P[f"{pre}.W1"], u, r) + (dout if residual else 0.0)
        if cache["stem_mask"] is not None:
            dz = dz * cache["stem_mask"]
        da0 = dz * (cache["a0"] > 0)
        grads["stem.W"] = da0.T @ X
        grads["stem.b"] = da0.sum(0)
        for key, m in self.masks.items():
            if key in grads:
                grads[key] = grads[key] * m
        return grads

    def predict(self, sample: ArchSample, X: np.ndarray, p: float = 0.0, seed: int = 0) -> np.ndarray:
        _, cache = self.forward(sample, X, np.zeros(len(X), dtype=int), p, seed)
        return np.argmax(cache["logp"], axis=1)

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """npz archive: one array per parameter key (``stem.W``, ``L3.k3_e6.W1``, ...)."""
        np.savez(path, **self.params)

    def load(self, path: str | Path) -> None:
        with np.load(path) as data:
            loaded = {k: data[k] for k in data.files}
        if set(loaded) != set(self.params):
            raise SpaceError("checkpoint keys do not match this supernet")
        for k, v in loaded.items():
            if v.shape != self.params[k].shape:
                raise SpaceError(f"checkpoint shape mismatch for {k}")
        self.params = loaded


# ----------------------------------------------------------------------------
# training
# ----------------------------------------------------------------------------


def sgd_step(net: ToySupernet, grads: dict[str, np.ndarray], velocity: dict[str, np.ndarray],
             lr: float, momentum: float, clip_norm: float = 0.0) -> None:
    """SGD with momentum on the keys present in ``grads`` only.

    With ``clip_norm > 0`` the joint gradient is rescaled to at most that norm.
    """
    if clip_norm > 0:
        norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
        if norm > clip_norm:
            grads = {k: g * (clip_norm / norm) for k, g in grads.items()}
    for k, g in grads.items():
        v = velocity.get(k)
        v = g if v is None else momentum * v + g
        velocity[k] = v
        net.params[k] = net.params[k] - lr * v


def _average(grad_list: Sequence[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for grads in grad_list:
        for k, g in grads.items():
            out[k] = out[k] + g if k in out else g.copy()
    for k in out:
        out[k] /= len(grad_list)
    return out


def _uniform_samples(space: SearchSpaceSpec, rng, count: int, with_split: bool) -> list[ArchSample]:
    sizes = space.sizes if with_split else space.arch_sizes
    return [
        ArchSample(tuple(int(rng.integers(k)) for k in sizes), sizes, with_split) for _ in range(count)
    ]


def _check_finite(loss: float, stage: str, epoch: int, step: int) -> None:
    if not np.isfinite(loss):
        raise TrainingDiverged(f"{stage}: non-finite loss at epoch {epoch}, step {step}")


def pretrain(net: ToySupernet, data: ToyData, cfg: TrainConfig, rng: np.random.Generator,
             p: float = 0.5, with_split: bool = True, eps_loss: float = 1.0,
             epochs: int | None = None) -> list[dict]:
    """Weight pre-training: per minibatch, average the gradients of ``lam_x``
    uniformly drawn subnetworks and take one momentum-SGD step."""
    epochs = cfg.pretrain_epochs if epochs is None else epochs
    X, y = data.X_train, data.y_train
    velocity: dict[str, np.ndarray] = {}
    metrics = []
    for epoch in range(epochs):
        order = rng.permutation(len(X))
        losses = []
        for step, start in enumerate(range(0, len(X), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            grads = []
            for s in _uniform_samples(net.space, rng, cfg.lam_x, with_split):
                loss, cache = net.forward(s, X[idx], y[idx], p if with_split else 0.0,
                                          seed=int(rng.integers(2**31)))
                _check_finite(loss, "pretrain", epoch, step)
                g = net.backward(cache)
                grads.append({k: eps_loss * v for k, v in g.items()})
                losses.append(loss)
            sgd_step(net, _average(grads), velocity, cfg.lr, cfg.momentum, cfg.clip_norm)
        metrics.append({"stage": "pretrain", "epoch": epoch, "train_loss": float(np.mean(losses))})
    return metrics


def evaluate(net: ToySupernet, sample: ArchSample, p: float, X: np.ndarray, y: np.ndarray,
             draws: int = 8, seed: int = 0) -> tuple[float, float]:
    """Mean (loss, accuracy) over ``draws`` packet-loss masks; one pass when p = 0."""
    if p == 0:
        draws = 1
    ss = np.random.SeedSequence(seed)
    losses, accs = [], []
    for child in ss.spawn(draws):
        s = int(child.generate_state(1)[0])
        loss, cache = net.forward(sample, X, y, p, seed=s)
        losses.append(loss)
        accs.append(float(np.mean(np.argmax(cache["logp"], axis=1) == y)))
    return float(np.mean(losses)), float(np.mean(accs))


def retrain(space: SearchSpaceSpec, a_star: ArchSample, data: ToyData, cfg: TrainConfig,
            seed: int, p_train: float = 0.5, report_rates: Sequence[float] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5),
            epochs: int | None = None, eval_every: int = 0) -> tuple[ToySupernet, dict, list[dict]]:
    """Train ``a_star`` from a fresh initialization with split dropout ``p_train``.

    Returns the network, final test metrics per reported rate, and per-epoch rows.
    """
    epochs = cfg.retrain_epochs if epochs is None else epochs
    rng = np.random.default_rng(seed)
    net = ToySupernet(space, data.n_classes, seed=int(rng.integers(2**31)),
                      inverted_dropout=cfg.inverted_dropout, init_scale=cfg.init_scale)
    X, y = data.X_train, data.y_train
    velocity: dict[str, np.ndarray] = {}
    rows = []
    for epoch in range(epochs):
        order = rng.permutation(len(X))
        losses = []
        for step, start in enumerate(range(0, len(X), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            loss, cache = net.forward(a_star, X[idx], y[idx], p_train, seed=int(rng.integers(2**31)))
            _check_finite(loss, "retrain", epoch, step)
            sgd_step(net, net.backward(cache), velocity, cfg.lr, cfg.momentum, cfg.clip_norm)
            losses.append(loss)
        row = {"stage": "retrain", "epoch": epoch, "train_loss": float(np.mean(losses))}
        if eval_every and (epoch + 1) % eval_every == 0:
            row["val_loss"], row["val_acc"] = evaluate(net, a_star, 0.0, data.X_val, data.y_val)
        rows.append(row)
    metrics = test_metrics(net, a_star, data, report_rates, cfg.eval_draws, seed)
    return net, metrics, rows


def test_metrics(net: ToySupernet, sample: ArchSample, data: ToyData, rates: Sequence[float],
                 draws: int, seed: int) -> dict:
    out = {}
    for p in rates:
        loss, acc = evaluate(net, sample, p, data.X_test, data.y_test, draws, seed)
        out[f"{p:g}"] = {"loss": loss, "accuracy": acc}
    return out


@dataclass
class SupernetEvaluator:
    """Evaluator over frozen supernet weights; ``batch`` is an (X, y) pair or a
    validation minibatch index, ``None`` meaning the whole validation split."""

    net: ToySupernet
    data: ToyData
    batch_size: int = 100

    @property
    def n_batches(self) -> int:
        return max(1, len(self.data.X_val) // self.batch_size)

    def _batch(self, batch):
        if batch is None:
            return self.data.X_val, self.data.y_val
        if isinstance(batch, (int, np.integer)):
            i = int(batch) % self.n_batches
            sl = slice(i * self.batch_size, (i + 1) * self.batch_size)
            return self.data.X_val[sl], self.data.y_val[sl]
        return batch

    def eval_loss(self, sample: ArchSample, p: float, batch=None, seed: int = 0) -> float:
        X, y = self._batch(batch)
        if sample.split is None:
            p = 0.0
        loss, _ = self.net.forward(sample, X, y, p, seed=seed)
        return loss
