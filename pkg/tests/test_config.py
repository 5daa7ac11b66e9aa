from __future__ import annotations

from pathlib import Path

import pytest

from antiphishstack.config import ExperimentConfig, Phase1Config, from_dict, load_config, with_overrides
from antiphishstack.errors import ConfigError
from antiphishstack.optim import OptimizerKind

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.seed == 42 and cfg.feature_mode == "both" and cfg.phase1.k == 10
    assert [s.name for s in cfg.learner_specs()] == ["linear_svm", "gaussian_nb", "decision_tree",
                                                      "logistic_regression", "knn", "smo"]
    assert cfg.optimizer("clf").kind is OptimizerKind.ADAM


@pytest.mark.parametrize("k", [2, 11, 0])
def test_k_range(k):
    with pytest.raises(ConfigError, match=r"k must be in 3\.\.10"):
        from_dict({"phase1": {"k": k}})


def test_hash_is_stable_and_content_sensitive():
    a, b = ExperimentConfig(), ExperimentConfig()
    assert a.config_hash() == b.config_hash() and len(a.config_hash()) == 16
    assert with_overrides(a, seed=1).config_hash() != a.config_hash()
    assert with_overrides(a, k=5).config_hash() != a.config_hash()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown keys"):
        from_dict({"phase1": {"folds": 3}})
    with pytest.raises(ConfigError, match="unknown keys"):
        from_dict({"colour": "red"})


@pytest.mark.parametrize("raw", [
    {"feature_mode": "pixels"},
    {"mse_form": "median"},
    {"phase2": {"optimizer": "lbfgs"}},
    {"phase2": {"premier_folds": 1}},
    {"phase2": {"preset": "ds3"}},
    {"phase2": {"learning_rate": 2.0}},
    {"phase1": {"learners": ["knn", "knn"]}},
    {"phase1": {"learners": ["forest"]}},
    {"phase1": {"params": {"knn": {"k": 3}}, "learners": ["smo"]}},
    {"data": {"train": "a.csv"}},
    {"data": {"train_fraction": 1.0}},
    {"feature_mode": "clf", "meta": {"raw_urlf_columns": True}},
    {"meta": {"learning_rate": -0.1}},
    {"tfidf": {"ngram_range": [3, 1]}},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        from_dict(raw)


def test_presets_override_schedule():
    cfg = from_dict({"phase2": {"preset": "ds1", "optimizer": "adagrad"}})
    opt = cfg.optimizer("clf")
    assert (opt.epochs, opt.learning_rate) == (200, 0.098)
    cfg = from_dict({"phase2": {"preset": "ds1", "optimizer": "adagrad", "learning_rate": 0.01}})
    assert cfg.optimizer("clf").learning_rate == 0.01


def test_shipped_configs_load():
    desk = load_config(CONFIGS / "desk.toml")
    assert desk.data.synthetic_n == 2000 and desk.phase1.k == 5
    for name in ("ds1", "ds2"):
        cfg = load_config(CONFIGS / "presets" / f"{name}.toml")
        assert cfg.phase2.preset == name and Path(cfg.data.path).is_absolute()


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 3\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_relative_data_paths_resolve_against_config(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[data]\npath = "data/x.csv"\n')
    assert load_config(path).data.path == str((tmp_path / "data" / "x.csv").resolve())


def test_overrides_ignore_none():
    cfg = ExperimentConfig()
    assert with_overrides(cfg, seed=None, k=None) == cfg
    cfg2 = with_overrides(cfg, optimizer="sgd", feature_mode="urlf")
    assert cfg2.phase2.optimizer == "sgd" and cfg2.feature_mode == "urlf"
    assert isinstance(cfg2.phase1, Phase1Config)
