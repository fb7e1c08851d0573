"""Run configuration: a YAML file whose defaults are the method's published constants.

A minimal config only names the space and the evaluator; everything else has
a default.  File references are resolved relative to the config file, and the
prefix ``bundled:`` points into the package's data directory.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .space import bundled_path

__all__ = [
    "ConfigError",
    "LinkConfig",
    "LatencyConfig",
    "ObjectiveBlock",
    "SearchConfig",
    "TrainBlock",
    "TaskBlock",
    "RunConfig",
    "load_config",
    "config_from_dict",
    "apply_overrides",
    "resolve_path",
]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class LinkConfig:
    throughput_bps: float = 8.0e6
    bits_per_element: float = 32.0
    loss_prob: float = 0.2  # packet-loss rate used when reporting results


@dataclass(frozen=True)
class LatencyConfig:
    mode: str = "table"  # table | flops
    table: str | None = None
    device_power: str | None = None
    powers: dict = field(default_factory=dict)  # inline GFLOPS, override the file
    head_device: str = "device"
    tail_device: str = "edge"


@dataclass(frozen=True)
class ObjectiveBlock:
    eps_loss: float = 1.0
    eps_lat: float = 1.0
    T_th: float = 30.0
    dropout_set: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    train_dropout_rate: float = 0.5


@dataclass(frozen=True)
class SearchConfig:
    alpha: float = 1.5
    delta_init: float = 1.0
    lam_x: int = 2
    lam_theta: int = 2
    delta_max: float = 1000.0
    theta_min: Any = "inverse_dims"  # "inverse_dims" -> 1/(D*K_d), or a number
    count_last_category: bool = False
    iterations: int = 2000  # tabular evaluator
    epochs: int = 90  # supernet evaluator: passes over the validation minibatches


@dataclass(frozen=True)
class TrainBlock:
    lr: float = 0.02
    momentum: float = 0.9
    batch_size: int = 64
    pretrain_epochs: int = 30
    retrain_epochs: int = 300
    val_batch_size: int = 100
    eval_draws: int = 8
    inverted_dropout: bool = False
    clip_norm: float = 5.0


@dataclass(frozen=True)
class TaskBlock:
    n_features: int = 16
    latent_dim: int = 14
    n_classes: int = 10
    teacher_width: int = 32
    n_train: int = 4000
    n_val: int = 1000
    n_test: int = 2000
    noise: float = 0.1
    seed: int = 1234


@dataclass(frozen=True)
class RunConfig:
    space: str
    evaluator: str = "tabular"  # tabular | supernet
    surrogate: str | None = None
    latency: LatencyConfig = LatencyConfig()
    link: LinkConfig = LinkConfig()
    objective: ObjectiveBlock = ObjectiveBlock()
    search: SearchConfig = SearchConfig()
    train: TrainBlock = TrainBlock()
    task: TaskBlock = TaskBlock()
    seed: int = 0
    out: str | None = None
    base_dir: str = "."

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["objective"]["dropout_set"] = list(d["objective"]["dropout_set"])
        d.pop("base_dir")
        return d

    def config_hash(self) -> str:
        """Hash over every field that changes results (the output directory does not)."""
        d = self.to_dict()
        d.pop("out")
        d["space"] = _file_fingerprint(self, self.space)
        d["surrogate"] = _file_fingerprint(self, self.surrogate)
        d["latency"]["table"] = _file_fingerprint(self, self.latency.table)
        d["latency"]["device_power"] = _file_fingerprint(self, self.latency.device_power)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def path(self, ref: str | None) -> Path | None:
        return resolve_path(ref, self.base_dir)


def _file_fingerprint(cfg: RunConfig, ref: str | None) -> str | None:
    p = cfg.path(ref)
    if p is None:
        return None
    return hashlib.sha256(p.read_bytes()).hexdigest()


def resolve_path(ref: str | None, base_dir: str | Path = ".") -> Path | None:
    if ref is None:
        return None
    if ref.startswith("bundled:"):
        return bundled_path(ref[len("bundled:"):])
    p = Path(ref)
    return p if p.is_absolute() else Path(base_dir) / p


_SECTIONS = {
    "latency": LatencyConfig,
    "link": LinkConfig,
    "objective": ObjectiveBlock,
    "search": SearchConfig,
    "train": TrainBlock,
    "task": TaskBlock,
}


def _build_section(cls, name: str, raw) -> Any:
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{name}: unknown field(s) {sorted(unknown)}")
    kwargs = {f.name: _coerce(f"{name}.{f.name}", f, raw[f.name]) for f in fields(cls) if f.name in raw}
    if cls is ObjectiveBlock and "dropout_set" in kwargs:
        try:
            kwargs["dropout_set"] = tuple(float(p) for p in kwargs["dropout_set"])
        except (TypeError, ValueError):
            raise ConfigError(f"{name}.dropout_set: expected a list of numbers") from None
    return cls(**kwargs)


def _coerce(key: str, f: dataclasses.Field, value):
    """Numeric fields accept numeric strings, since YAML reads ``4e6`` as text."""
    default = f.default
    if isinstance(default, bool) or not isinstance(default, (int, float)) or isinstance(value, bool):
        return value
    if isinstance(value, (int, float)) and not (isinstance(default, int) and isinstance(value, float)):
        return value
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if isinstance(default, int):
        if not number.is_integer():
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(number)
    return number


def config_from_dict(doc: dict, base_dir: str | Path = ".") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    if "space" not in doc:
        raise ConfigError("space: required")
    top = {f.name for f in fields(RunConfig)} - {"base_dir"}
    unknown = set(doc) - top
    if unknown:
        raise ConfigError(f"unknown top-level field(s) {sorted(unknown)}")
    kwargs = {k: v for k, v in doc.items() if k not in _SECTIONS}
    for name, cls in _SECTIONS.items():
        kwargs[name] = _build_section(cls, name, doc.get(name))
    try:
        cfg = RunConfig(base_dir=str(base_dir), **kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    validate(cfg)
    return cfg


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    doc = apply_overrides(doc, overrides or [])
    return config_from_dict(doc, path.parent)


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars."""
    doc = copy.deepcopy(doc)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {part} is not a section")
        node[parts[-1]] = yaml.safe_load(raw)
    return doc


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate(cfg: RunConfig) -> None:
    """Field-level checks, run before any work starts."""
    _require(isinstance(cfg.seed, int) and not isinstance(cfg.seed, bool) and cfg.seed >= 0,
             f"seed: must be a non-negative integer, got {cfg.seed!r}")
    _require(cfg.evaluator in ("tabular", "supernet"), f"evaluator: must be tabular or supernet, got {cfg.evaluator!r}")
    for name in ("space", "surrogate"):
        ref = getattr(cfg, name)
        if ref is not None:
            p = cfg.path(ref)
            _require(p.exists(), f"{name}: file {p} does not exist")
    _require(cfg.evaluator != "tabular" or cfg.surrogate is not None, "surrogate: required for the tabular evaluator")

    lat = cfg.latency
    _require(lat.mode in ("table", "flops"), f"latency.mode: must be table or flops, got {lat.mode!r}")
    if lat.mode == "table":
        _require(lat.table is not None, "latency.table: required in table mode")
    else:
        _require(lat.device_power is not None or lat.powers, "latency.device_power or latency.powers: required in flops mode")
    for name in ("table", "device_power"):
        ref = getattr(lat, name)
        if ref is not None:
            p = cfg.path(ref)
            _require(p.exists(), f"latency.{name}: file {p} does not exist")
    for dev, v in lat.powers.items():
        _require(isinstance(v, (int, float)) and v > 0, f"latency.powers.{dev}: must be > 0")

    link = cfg.link
    _require(link.throughput_bps > 0, "link.throughput_bps: must be > 0")
    _require(link.bits_per_element > 0, "link.bits_per_element: must be > 0")
    _require(0 <= link.loss_prob < 1, "link.loss_prob: must lie in [0, 1)")

    obj = cfg.objective
    _require(obj.eps_loss >= 0 and obj.eps_lat >= 0, "objective.eps_loss/eps_lat: must be >= 0")
    _require(obj.T_th >= 0, "objective.T_th: must be >= 0")
    _require(len(obj.dropout_set) > 0, "objective.dropout_set: must be non-empty")
    _require(all(0 <= p < 1 for p in obj.dropout_set), "objective.dropout_set: rates must lie in [0, 1)")
    _require(0 <= obj.train_dropout_rate < 1, "objective.train_dropout_rate: must lie in [0, 1)")

    s = cfg.search
    _require(s.alpha > 0, "search.alpha: must be > 0")
    _require(s.delta_init > 0, "search.delta_init: must be > 0")
    _require(s.delta_max > 0, "search.delta_max: must be > 0")
    _require(s.lam_x == 2, "search.lam_x: only 2 is supported")
    _require(s.lam_theta == 2, "search.lam_theta: only 2 is supported")
    _require(s.iterations >= 0 and s.epochs >= 0, "search.iterations/epochs: must be >= 0")
    _require(
        s.theta_min == "inverse_dims" or (isinstance(s.theta_min, (int, float)) and 0 <= s.theta_min < 1),
        "search.theta_min: must be 'inverse_dims' or a number in [0, 1)",
    )

    t = cfg.train
    _require(t.lr >= 0, "train.lr: must be >= 0")
    _require(0 <= t.momentum < 1, "train.momentum: must lie in [0, 1)")
    _require(t.batch_size > 0 and t.val_batch_size > 0, "train.batch_size/val_batch_size: must be > 0")
    _require(t.pretrain_epochs >= 0 and t.retrain_epochs >= 0, "train.*_epochs: must be >= 0")
    _require(t.eval_draws > 0, "train.eval_draws: must be > 0")
    _require(t.clip_norm >= 0, "train.clip_norm: must be >= 0")

    k = cfg.task
    _require(k.n_train > 0 and k.n_val > 0 and k.n_test > 0, "task: split sizes must be > 0")
    _require(k.n_classes >= 2, "task.n_classes: must be >= 2")
