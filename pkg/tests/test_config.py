import shutil

import pytest
import yaml

from splitnas.config import ConfigError, RunConfig, apply_overrides, config_from_dict, load_config, resolve_path
from splitnas.space import bundled_path

DEMO = bundled_path("configs/demo_tabular.yaml")
TOY = bundled_path("configs/toy_nasc.yaml")


def minimal():
    return {
        "space": "bundled:demo_space.yaml",
        "surrogate": "bundled:demo_surrogate.yaml",
        "latency": {"table": "bundled:demo_latency.csv"},
    }


def test_defaults():
    cfg = config_from_dict(minimal())
    assert cfg.search.alpha == 1.5 and cfg.search.delta_init == 1.0
    assert cfg.search.lam_x == 2 and cfg.search.lam_theta == 2
    assert cfg.search.delta_max == 1000.0 and cfg.search.epochs == 90
    assert cfg.objective.dropout_set == (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    assert cfg.objective.train_dropout_rate == 0.5
    assert cfg.objective.eps_loss == cfg.objective.eps_lat == 1.0
    assert cfg.link.throughput_bps == 8.0e6 and cfg.link.bits_per_element == 32
    assert cfg.train.pretrain_epochs == 30


def test_bundled_configs_load():
    for path in (DEMO, TOY):
        cfg = load_config(path)
        assert cfg.path(cfg.space).exists()
    assert load_config(TOY).evaluator == "supernet"


def test_overrides():
    cfg = load_config(DEMO, ["link.throughput_bps=4e6", "objective.T_th=7", "seed=3"])
    assert cfg.link.throughput_bps == 4e6 and cfg.objective.T_th == 7 and cfg.seed == 3


def test_numeric_strings_accepted():
    cfg = config_from_dict({**minimal(), "link": {"throughput_bps": "8e6"}, "train": {"batch_size": 32.0}})
    assert cfg.link.throughput_bps == 8e6 and cfg.train.batch_size == 32 and isinstance(cfg.train.batch_size, int)


def test_override_syntax_error():
    with pytest.raises(ConfigError, match="key=value"):
        apply_overrides({}, ["seed"])


def test_override_does_not_mutate():
    doc = {"link": {"throughput_bps": 1.0}}
    apply_overrides(doc, ["link.throughput_bps=2"])
    assert doc["link"]["throughput_bps"] == 1.0


@pytest.mark.parametrize(
    "override, field",
    [
        ("link.throughput_bps=0", "link.throughput_bps"),
        ("link.loss_prob=1.0", "link.loss_prob"),
        ("objective.T_th=-1", "objective.T_th"),
        ("objective.dropout_set=[0.0, 1.0]", "objective.dropout_set"),
        ("search.lam_theta=4", "search.lam_theta"),
        ("search.theta_min=2", "search.theta_min"),
        ("train.eval_draws=0", "train.eval_draws"),
        ("latency.mode=magic", "latency.mode"),
        ("evaluator=gpu", "evaluator"),
        ("seed=abc", "seed"),
        ("link.throughput_bps=fast", "link.throughput_bps"),
        ("train.batch_size=2.5", "train.batch_size"),
    ],
)
def test_invalid_values_name_the_field(override, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        load_config(DEMO, [override])


def test_unknown_fields_rejected():
    doc = minimal()
    doc["search"] = {"alpah": 1.5}
    with pytest.raises(ConfigError, match="alpah"):
        config_from_dict(doc)
    with pytest.raises(ConfigError, match="colour"):
        config_from_dict({**minimal(), "colour": "red"})


def test_missing_files_reported():
    with pytest.raises(ConfigError, match="surrogate"):
        config_from_dict({**minimal(), "surrogate": "nowhere.yaml"})
    with pytest.raises(ConfigError, match="does not exist"):
        load_config("/nonexistent/config.yaml")
    with pytest.raises(ConfigError, match="space"):
        config_from_dict({"evaluator": "tabular"})


def test_hash_tracks_semantics_only(tmp_path):
    base = load_config(DEMO)
    assert load_config(DEMO, ["out=elsewhere"]).config_hash() == base.config_hash()
    assert load_config(DEMO, ["objective.T_th=7"]).config_hash() != base.config_hash()
    assert load_config(DEMO, ["seed=1"]).config_hash() != base.config_hash()


def test_hash_follows_file_contents(tmp_path):
    for name in ("demo_space.yaml", "demo_surrogate.yaml", "demo_latency.csv"):
        shutil.copy(bundled_path(name), tmp_path / name)
    doc = {"space": "demo_space.yaml", "surrogate": "demo_surrogate.yaml", "latency": {"table": "demo_latency.csv"}}
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(doc))
    h1 = load_config(tmp_path / "c.yaml").config_hash()
    with open(tmp_path / "demo_latency.csv", "a") as fh:
        fh.write("0,k3_e3,spare,1.0\n")
    assert load_config(tmp_path / "c.yaml").config_hash() != h1


def test_relative_paths_resolve_against_config(tmp_path):
    assert resolve_path("x.csv", tmp_path) == tmp_path / "x.csv"
    assert resolve_path("/abs/x.csv", tmp_path).as_posix() == "/abs/x.csv"
    assert resolve_path("bundled:demo_space.yaml") == bundled_path("demo_space.yaml")
    assert resolve_path(None) is None


def test_to_dict_roundtrip():
    cfg = load_config(DEMO)
    again = config_from_dict(cfg.to_dict(), cfg.base_dir)
    assert isinstance(again, RunConfig)
    assert again.config_hash() == cfg.config_hash()
