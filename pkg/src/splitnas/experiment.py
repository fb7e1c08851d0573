"""Experiment orchestration: turn a RunConfig into searched, split and re-trained models.

Two protocols share one setup:

* ``run_nasc``: joint search of architecture and split point, then re-training.
* ``run_hwnas``: architecture search that ignores communication, post-hoc split
  selection, then re-training with and/or without split dropout.

Every random stream is spawned from the configured seed, so the two protocols
see the same seeds for weight init, pre-training, search and re-training.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import categorical as cat
from .asng import AsngConfig, UpdateResult, run_distribution_update
from .baseline import BaselineConfig, hwnas_search, split_point_opt
from .config import ConfigError, RunConfig
from .latency import (
    LatencyError,
    LatencyModel,
    LinkModel,
    read_device_power,
    read_latency_table,
)
from .objective import (
    ObjectiveBreakdown,
    ObjectiveConfig,
    TabularEvaluator,
    load_surrogate,
    nasc_objective,
)
from .space import ArchSample, SearchSpaceSpec, SpaceError, load_space
from .supernet import (
    SupernetEvaluator,
    ToyData,
    ToySupernet,
    ToyTaskConfig,
    TrainConfig,
    make_toy_task,
    pretrain,
    retrain,
)

log = logging.getLogger(__name__)

__all__ = [
    "Setup",
    "build",
    "RunOutcome",
    "run_nasc",
    "run_hwnas",
    "seed_streams",
    "report_row",
    "compare_protocols",
    "ComparisonSummary",
    "summarize_comparison",
]

STREAMS = ("init", "pretrain", "search", "retrain")


@dataclass
class Setup:
    config: RunConfig
    space: SearchSpaceSpec
    latency_model: LatencyModel
    objective: ObjectiveConfig
    asng: AsngConfig
    train: TrainConfig
    surrogate: TabularEvaluator | None = None
    data: ToyData | None = None

    @property
    def supernet_mode(self) -> bool:
        return self.config.evaluator == "supernet"

    def theta_min(self, sizes: Sequence[int]):
        rule = self.config.search.theta_min
        if rule == "inverse_dims":
            return cat.default_theta_min(sizes)
        return np.full(len(sizes), float(rule))

    def n_val_batches(self) -> int:
        return max(1, self.config.task.n_val // self.train.val_batch_size)

    def search_budget(self) -> int:
        if self.supernet_mode:
            return self.config.search.epochs * self.n_val_batches()
        return self.config.search.iterations


def build(cfg: RunConfig) -> Setup:
    """Load every referenced file and check it against the space; content
    errors surface as ConfigError before any work starts."""
    try:
        space = load_space(cfg.path(cfg.space))
        lat = cfg.latency
        link = LinkModel(cfg.link.throughput_bps, cfg.link.bits_per_element, cfg.link.loss_prob)
        if lat.mode == "table":
            table = read_latency_table(cfg.path(lat.table))
            table.check_space(space, (lat.head_device, lat.tail_device))
            lm = LatencyModel("table", lat.head_device, lat.tail_device, link, table=table)
        else:
            powers = read_device_power(cfg.path(lat.device_power)) if lat.device_power else {}
            powers.update({k: float(v) for k, v in lat.powers.items()})
            lm = LatencyModel("flops", lat.head_device, lat.tail_device, link, powers=powers)
        obj = ObjectiveConfig(**vars(cfg.objective))
        surrogate = load_surrogate(cfg.path(cfg.surrogate), space) if cfg.evaluator == "tabular" else None
    except (LatencyError, SpaceError, KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    s = cfg.search
    asng = AsngConfig(s.alpha, s.delta_init, s.lam_theta, s.delta_max, omit_last=not s.count_last_category)
    t = cfg.train
    train = TrainConfig(
        lr=t.lr, momentum=t.momentum, batch_size=t.batch_size, pretrain_epochs=t.pretrain_epochs,
        search_epochs=s.epochs, retrain_epochs=t.retrain_epochs, val_batch_size=t.val_batch_size,
        eval_draws=t.eval_draws, lam_x=s.lam_x, inverted_dropout=t.inverted_dropout, clip_norm=t.clip_norm,
    )
    data = None
    if cfg.evaluator == "supernet":
        data = make_toy_task(ToyTaskConfig(**vars(cfg.task)))
        if space.input_shape[0] != cfg.task.n_features:
            raise ConfigError("task.n_features: must match the space's input channels")
        last = space.suffix[-1] if space.suffix else None
        if last is not None and last.kind == "linear" and last.out_channels != cfg.task.n_classes:
            raise ConfigError("task.n_classes: must match the space's classifier width")
    return Setup(cfg, space, lm, obj, asng, train, surrogate, data)


def seed_streams(seed: int) -> dict[str, int]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: int(c.generate_state(1)[0]) for name, c in zip(STREAMS, children)}


@dataclass
class RunOutcome:
    method: str
    seed: int
    sample: ArchSample
    breakdown: ObjectiveBreakdown
    accuracy: dict = field(default_factory=dict)  # "p" -> test accuracy
    test_loss: dict = field(default_factory=dict)
    search: UpdateResult | None = None
    split_scan: list = field(default_factory=list)
    pretrain_rows: list = field(default_factory=list)
    retrain_rows: list = field(default_factory=list)
    model: ToySupernet | None = None


def _report_rates(setup: Setup) -> tuple[float, ...]:
    rates = list(setup.objective.dropout_set)
    if setup.config.link.loss_prob not in rates:
        rates.append(setup.config.link.loss_prob)
    return tuple(sorted(rates))


def final_breakdown(setup: Setup, sample: ArchSample, model: ToySupernet | None) -> ObjectiveBreakdown:
    """Objective of a finished run: surrogate loss, or l_SC of the re-trained
    model on the full validation split (mask seed 0)."""
    if setup.supernet_mode:
        ev = SupernetEvaluator(model, setup.data, setup.train.val_batch_size)
    else:
        ev = setup.surrogate
    return nasc_objective(ev, sample, setup.space, setup.latency_model, setup.objective)


def _retrain(setup: Setup, sample: ArchSample, p_train: float, seed: int):
    net, metrics, rows = retrain(
        setup.space, sample, setup.data, setup.train, seed, p_train=p_train, report_rates=_report_rates(setup)
    )
    return net, metrics, rows


def run_nasc(setup: Setup, seed: int | None = None, keep_history: bool = True) -> RunOutcome:
    seed = setup.config.seed if seed is None else seed
    streams = seed_streams(seed)
    space, lm, obj = setup.space, setup.latency_model, setup.objective
    pre_rows: list = []
    if setup.supernet_mode:
        net = ToySupernet(space, setup.data.n_classes, seed=streams["init"],
                          inverted_dropout=setup.train.inverted_dropout)
        pre_rows = pretrain(net, setup.data, setup.train, np.random.default_rng(streams["pretrain"]),
                            p=obj.train_dropout_rate, with_split=True, eps_loss=obj.eps_loss)
        ev = SupernetEvaluator(net, setup.data, setup.train.val_batch_size)
    else:
        ev = setup.surrogate

    def evaluate(samples, t):
        batch = t if setup.supernet_mode else None
        return [nasc_objective(ev, s, space, lm, obj, batch, seed=t).combined for s in samples]

    theta0 = cat.init_uniform(space.sizes)
    result = run_distribution_update(
        theta0, evaluate, setup.search_budget(), np.random.default_rng(streams["search"]),
        setup.asng, setup.theta_min(space.sizes), keep_history=keep_history,
    )
    a_star = cat.most_likely(result.theta)
    out = RunOutcome("nasc", seed, a_star, None, search=result, pretrain_rows=pre_rows)
    if setup.supernet_mode:
        out.model, metrics, out.retrain_rows = _retrain(setup, a_star, obj.train_dropout_rate, streams["retrain"])
        out.accuracy = {k: v["accuracy"] for k, v in metrics.items()}
        out.test_loss = {k: v["loss"] for k, v in metrics.items()}
    out.breakdown = final_breakdown(setup, a_star, out.model)
    return out


def run_hwnas(setup: Setup, variants: Sequence[str] = ("with_dropout",), seed: int | None = None,
              keep_history: bool = True) -> dict[str, RunOutcome]:
    """One baseline search and split selection, re-trained once per variant."""
    seed = setup.config.seed if seed is None else seed
    configs = [BaselineConfig(v, setup.objective.train_dropout_rate) for v in variants]
    streams = seed_streams(seed)
    space, lm, obj = setup.space, setup.latency_model, setup.objective
    pre_rows: list = []
    if setup.supernet_mode:
        net = ToySupernet(space, setup.data.n_classes, seed=streams["init"],
                          inverted_dropout=setup.train.inverted_dropout)
        # conventional one-shot training: no split, no packet loss
        pre_rows = pretrain(net, setup.data, setup.train, np.random.default_rng(streams["pretrain"]),
                            p=0.0, with_split=False, eps_loss=obj.eps_loss)
        ev = SupernetEvaluator(net, setup.data, setup.train.val_batch_size)
        batch_fn = lambda t: t  # noqa: E731
    else:
        ev = setup.surrogate
        batch_fn = None
    arch, search = hwnas_search(
        space, ev, lm, obj, setup.search_budget(), np.random.default_rng(streams["search"]),
        setup.asng, batch_fn=batch_fn, keep_history=keep_history, theta_min=setup.theta_min(space.arch_sizes),
    )
    sample, scan = split_point_opt(arch, space, ev, lm, obj)
    outcomes = {}
    for bc in configs:
        out = RunOutcome(f"hwnas_{bc.variant}", seed, sample, None, search=search, split_scan=scan,
                         pretrain_rows=pre_rows)
        if setup.supernet_mode:
            out.model, metrics, out.retrain_rows = _retrain(setup, sample, bc.retrain_p, streams["retrain"])
            out.accuracy = {k: v["accuracy"] for k, v in metrics.items()}
            out.test_loss = {k: v["loss"] for k, v in metrics.items()}
        out.breakdown = final_breakdown(setup, sample, out.model)
        outcomes[bc.variant] = out
    return outcomes


RESULT_FIXED_COLUMNS = ("T", "T_head", "T_comm", "T_tail", "tau", "combined")


def result_columns(rates: Sequence[float]) -> list[str]:
    return ["method", "seed"] + [f"acc@{p:g}" for p in rates] + list(RESULT_FIXED_COLUMNS)


def report_row(method: str, seed: int, accuracy: dict, breakdown: ObjectiveBreakdown,
               rates: Sequence[float]) -> dict:
    """One results-table row; accuracy cells are empty for the tabular evaluator."""
    row = {"method": method, "seed": seed}
    for p in rates:
        row[f"acc@{p:g}"] = accuracy.get(f"{p:g}", "")
    d = breakdown.as_dict()
    for k in RESULT_FIXED_COLUMNS:
        row[k] = d[k]
    return row


def compare_protocols(setup: Setup, seeds: Sequence[int], log_fn=None) -> list[dict]:
    """Run NASC and both baseline variants per seed; one row per (method, seed).

    Rows carry the method, seed, the chosen architecture, the latency breakdown
    and, in supernet mode, test accuracy per reported rate.
    """
    rates = _report_rates(setup)
    rows = []
    for seed in seeds:
        outcomes = {"nasc": run_nasc(setup, seed, keep_history=False)}
        for variant, out in run_hwnas(setup, ("with_dropout", "without_dropout"), seed, keep_history=False).items():
            outcomes[f"hwnas_{variant}"] = out
        for method, out in outcomes.items():
            row = report_row(method, seed, out.accuracy, out.breakdown, rates)
            row["sample"] = " ".join(str(i) for i in out.sample.indices)
            rows.append(row)
            if log_fn is not None:
                log_fn(row)
    return rows


@dataclass(frozen=True)
class ComparisonSummary:
    n_seeds: int
    nasc_feasible: int  # NASC seeds with T <= T_th
    baseline_infeasible: int  # baseline seeds with T > T_th
    median_T_nasc: float
    median_T_baseline: float
    latency_reduction: float  # 1 - median NASC T / median baseline T
    median_acc_nasc: float
    median_acc_baseline: float
    dropout_wins: int  # seeds where the baseline re-trained with dropout beats the one without

    @property
    def accuracy_gap_pp(self) -> float:
        """NASC median accuracy minus the baseline median, in percentage points."""
        return 100.0 * (self.median_acc_nasc - self.median_acc_baseline)


def summarize_comparison(rows: Sequence[dict], T_th: float, p: float,
                         baseline: str = "hwnas_with_dropout") -> ComparisonSummary:
    """Aggregate ``compare_protocols`` rows at report rate ``p`` against one baseline variant."""
    by = {}
    for r in rows:
        by.setdefault(r["method"], {})[r["seed"]] = r
    seeds = sorted(by["nasc"])
    acc = f"acc@{p:g}"
    nasc = [by["nasc"][s] for s in seeds]
    base = [by[baseline][s] for s in seeds]
    with_d = [by["hwnas_with_dropout"][s][acc] for s in seeds]
    without_d = [by["hwnas_without_dropout"][s][acc] for s in seeds]
    med_n = float(np.median([r["T"] for r in nasc]))
    med_b = float(np.median([r["T"] for r in base]))
    return ComparisonSummary(
        n_seeds=len(seeds),
        nasc_feasible=sum(r["T"] <= T_th for r in nasc),
        baseline_infeasible=sum(r["T"] > T_th for r in base),
        median_T_nasc=med_n,
        median_T_baseline=med_b,
        latency_reduction=1.0 - med_n / med_b,
        median_acc_nasc=float(np.median([r[acc] for r in nasc])),
        median_acc_baseline=float(np.median([r[acc] for r in base])),
        dropout_wins=sum(a > b for a, b in zip(with_d, without_d)),
    )
