import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitnas import categorical as cat
from splitnas.latency import LatencyModel, LinkModel, read_latency_table
from splitnas.objective import ObjectiveConfig, load_surrogate, nasc_objective
from splitnas.oracle import REPORT_COLUMNS, SpaceTooLarge, enumerate_optimum, export_report, merge_reports
from splitnas.space import ArchSample, bundled_path, bundled_space, cardinality, iter_samples, space_from_dict


class CountingEvaluator:
    def __init__(self, value=None):
        self.value = value
        self.calls = 0
        self.seen = set()

    def eval_loss(self, sample, p, batch=None, seed=0):
        self.calls += 1
        self.seen.add(sample.sample_id())
        return self.value if self.value is not None else float(sum(sample.indices))


def tiny_space():
    doc = {
        "input": [4, 2, 2],
        "blocks": [{"id": "a", "kernel": 3, "expansion": 1}, {"id": "skip", "skip": True}],
        "prefix": [{"name": "stem", "out_channels": 4}],
        "layers": [{"out_channels": 4}],
    }
    return space_from_dict(doc)


@pytest.fixture(scope="module")
def demo_setup():
    demo = bundled_space("demo_space")
    surrogate = load_surrogate(bundled_path("demo_surrogate.yaml"), demo)
    lm = LatencyModel("table", "device", "edge", LinkModel(), table=read_latency_table(bundled_path("demo_latency.csv")))
    return demo, surrogate, lm, ObjectiveConfig(T_th=6.5)


def test_tiny_space_four_evaluations():
    sp = tiny_space()
    assert sp.sizes == (2, 2)
    ev = CountingEvaluator()
    cfg = ObjectiveConfig(dropout_set=(0.0,))
    lm = LatencyModel("flops", "d", "e", powers={"d": 1.0, "e": 1.0})
    report = enumerate_optimum(sp, ev, lm, cfg)
    assert ev.calls == 4 and len(ev.seen) == 4
    assert report.n_evaluations == 4


def test_evaluation_count_is_cardinality(demo_setup):
    demo, _, lm, cfg = demo_setup
    ev = CountingEvaluator()
    report = enumerate_optimum(demo, ev, lm, cfg)
    assert ev.calls == cardinality(demo) * len(cfg.dropout_set)
    assert len(report.ranking) == cardinality(demo)


def test_demo_best_matches_recomputation(demo_setup):
    demo, surrogate, lm, cfg = demo_setup
    report = enumerate_optimum(demo, surrogate, lm, cfg)
    again = nasc_objective(surrogate, report.best, demo, lm, cfg)
    assert again.combined == report.best_objective
    assert all(report.best_objective <= b.combined for b in report.ranking.values())
    assert report.is_unique_optimum()


def test_uniform_objective_all_feasible():
    demo = bundled_space("demo_space")
    lm = LatencyModel("table", "device", "edge", LinkModel(), table=read_latency_table(bundled_path("demo_latency.csv")))
    report = enumerate_optimum(demo, CountingEvaluator(1.0), lm, ObjectiveConfig(T_th=1e9))
    assert report.feasible_count == cardinality(demo)
    # all objectives tie, so the lowest sample id wins
    assert report.best.sample_id() == 0


def test_cap_refusal_states_cardinality():
    fbnet = bundled_space("fbnet_cifar100")
    with pytest.raises(SpaceTooLarge, match=str(cardinality(fbnet))):
        enumerate_optimum(fbnet, CountingEvaluator(), None, ObjectiveConfig())


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_partitioned_merge_is_order_independent(seed, n_parts):
    demo = bundled_space("demo_space")
    surrogate = load_surrogate(bundled_path("demo_surrogate.yaml"), demo)
    lm = LatencyModel("table", "device", "edge", LinkModel(), table=read_latency_table(bundled_path("demo_latency.csv")))
    cfg = ObjectiveConfig(T_th=6.5)
    full = enumerate_optimum(demo, surrogate, lm, cfg)
    rng = np.random.default_rng(seed)
    ids = rng.permutation(cardinality(demo))
    parts = []
    for chunk in np.array_split(ids, n_parts):
        parts.append({int(i): full.ranking[int(i)] for i in chunk})
    rng.shuffle(parts)
    merged = merge_reports(parts, demo, cfg)
    assert merged.best == full.best
    assert merged.best_objective == full.best_objective
    assert merged.feasible_count == full.feasible_count
    assert merged.ordered() == full.ordered()


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1))
def test_most_likely_never_beats_oracle(seed):
    demo = bundled_space("demo_space")
    surrogate = load_surrogate(bundled_path("demo_surrogate.yaml"), demo)
    lm = LatencyModel("table", "device", "edge", LinkModel(), table=read_latency_table(bundled_path("demo_latency.csv")))
    cfg = ObjectiveConfig(T_th=6.5)
    best = enumerate_optimum(demo, surrogate, lm, cfg).best_objective
    rng = np.random.default_rng(seed)
    th = cat.DistributionParams(tuple(rng.dirichlet(np.ones(k)) for k in demo.sizes))
    assert nasc_objective(surrogate, cat.most_likely(th), demo, lm, cfg).combined >= best


def test_export_report(tmp_path, demo_setup):
    demo, surrogate, lm, cfg = demo_setup
    report = enumerate_optimum(demo, surrogate, lm, cfg)
    path = tmp_path / "report.csv"
    export_report(report, demo, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert len(rows) == cardinality(demo) + 1
    assert int(rows[1][0]) == report.best.sample_id()
    assert float(rows[1][-1]) == report.best_objective


def test_enumeration_order_matches_ids():
    demo = bundled_space("demo_space")
    assert [s.sample_id() for s in iter_samples(demo)] == list(range(cardinality(demo)))
    assert ArchSample.from_id(404, demo.sizes).indices == (2, 2, 2, 2, 4)
