"""Experiment configuration: TOML loading, validation and a canonical content hash."""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .base_learners import CLASSICAL_KINDS, LearnerKind, LearnerSpec, validate_k
from .boost import BoostParams
from .errors import ConfigError
from .lstm import NetConfig, TrainSchedule
from .optim import OptimizerConfig, OptimizerKind, PRESETS
from .tfidf import DEFAULT_MAX_FEATURES, DEFAULT_MAX_LEN, DEFAULT_NGRAM_RANGE, _check_range

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FEATURE_MODES = ("urlf", "clf", "both")


@dataclass(frozen=True)
class DataConfig:
    path: str = ""                  # one labelled file, split by train_fraction
    train: str = ""                 # or an explicit pre-split pair
    test: str = ""
    synthetic_n: int = 0            # > 0 generates a corpus instead of reading files
    synthetic_difficulty: float = 0.0
    synthetic_label_noise: float = 0.0
    train_fraction: float = 0.70
    stratified: bool = True
    delimiter: str = ","


@dataclass(frozen=True)
class Phase1Config:
    k: int = 10
    learners: tuple[str, ...] = tuple(k.value for k in CLASSICAL_KINDS)
    params: dict[str, dict[str, Any]] = field(default_factory=dict)
    per_learner_columns: bool = False   # also feed each learner's probability to the meta model


@dataclass(frozen=True)
class Phase2Config:
    optimizer: str = "adam"
    learning_rate: float | None = None
    epochs: int | None = None
    preset: str = ""                # "ds1" or "ds2": take epochs / lr from the reference tables
    max_epochs: int | None = None
    batch_size: int = 32
    patience: int = 10
    min_delta: float = 1e-4
    val_fraction: float = 0.1
    dtype: str = "float32"
    max_len: int = DEFAULT_MAX_LEN
    embed_dim: int = 32
    hidden: int = 128
    num_layers: int = 2
    dense: tuple[int, ...] = (64, 16)
    dropout: float = 0.5
    premier_folds: int = 3          # cross-fitted premier on training rows; 0 = in-sample


@dataclass(frozen=True)
class TfidfConfig:
    ngram_range: tuple[int, int] = DEFAULT_NGRAM_RANGE
    max_features: int = DEFAULT_MAX_FEATURES


@dataclass(frozen=True)
class MetaConfig:
    rounds: int = 100
    learning_rate: float = 0.1
    lam: float = 1.0
    gamma: float = 0.0
    max_depth: int = 3
    min_child_hessian: float = 1.0
    raw_urlf_columns: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 42
    feature_mode: str = "both"
    jobs: int = 1
    mse_form: str = "mean"
    data: DataConfig = DataConfig()
    phase1: Phase1Config = Phase1Config()
    phase2: Phase2Config = Phase2Config()
    tfidf: TfidfConfig = TfidfConfig()
    meta: MetaConfig = MetaConfig()

    def __post_init__(self):
        validate(self)

    # sub-configs for the modules
    def learner_specs(self) -> list[LearnerSpec]:
        return [LearnerSpec(LearnerKind(name), self.phase1.params.get(name, {}))
                for name in self.phase1.learners]

    def optimizer(self, feature_set: str) -> OptimizerConfig:
        p2 = self.phase2
        if p2.preset:
            base = OptimizerConfig.preset(p2.preset, feature_set, p2.optimizer)
            return replace(base, **{k: v for k, v in (("learning_rate", p2.learning_rate),
                                                      ("epochs", p2.epochs)) if v is not None})
        return OptimizerConfig(OptimizerKind(p2.optimizer), p2.learning_rate, p2.epochs)

    def net(self, input_mode: str) -> NetConfig:
        p2 = self.phase2
        return NetConfig(input_mode=input_mode, embed_dim=p2.embed_dim, hidden=p2.hidden,
                         num_layers=p2.num_layers, dense=p2.dense, dropout=p2.dropout)

    def schedule(self, seed: int) -> TrainSchedule:
        p2 = self.phase2
        return TrainSchedule(batch_size=p2.batch_size, max_epochs=p2.max_epochs, patience=p2.patience,
                             min_delta=p2.min_delta, val_fraction=p2.val_fraction, seed=seed,
                             dtype=p2.dtype)

    def boost_params(self) -> BoostParams:
        m = self.meta
        return BoostParams(m.rounds, m.learning_rate, m.lam, m.gamma, m.max_depth, m.min_child_hessian)

    def canonical(self) -> dict:
        return json.loads(json.dumps(asdict(self), sort_keys=True))

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def validate(cfg: ExperimentConfig) -> None:
    if cfg.feature_mode not in FEATURE_MODES:
        raise ConfigError(f"feature_mode must be one of {FEATURE_MODES}, got {cfg.feature_mode!r}")
    if cfg.mse_form not in ("mean", "half-sum"):
        raise ConfigError(f"mse_form must be 'mean' or 'half-sum', got {cfg.mse_form!r}")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    d = cfg.data
    if not 0.0 < d.train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {d.train_fraction}")
    if bool(d.train) != bool(d.test):
        raise ConfigError("data.train and data.test must be given together")
    validate_k(cfg.phase1.k)
    if not cfg.phase1.learners:
        raise ConfigError("phase1.learners is empty")
    unknown = set(cfg.phase1.params) - set(cfg.phase1.learners)
    if unknown:
        raise ConfigError(f"phase1.params names learners that are not enabled: {sorted(unknown)}")
    try:
        specs = cfg.learner_specs()
    except ValueError as exc:
        raise ConfigError(f"phase1.learners: {exc}") from None
    if len({s.name for s in specs}) != len(specs):
        raise ConfigError("phase1.learners contains duplicates")
    p2 = cfg.phase2
    try:
        OptimizerKind(p2.optimizer)
    except ValueError:
        raise ConfigError(f"unknown optimizer {p2.optimizer!r}") from None
    if p2.preset and p2.preset.lower() not in {key[0] for key in PRESETS}:
        raise ConfigError(f"unknown preset {p2.preset!r}; expected ds1 or ds2")
    for fs in ("urlf", "clf"):
        cfg.optimizer(fs)
    cfg.net("chars")
    cfg.schedule(0)
    if p2.max_len < 1:
        raise ConfigError("phase2.max_len must be positive")
    if p2.premier_folds == 1 or p2.premier_folds < 0:
        raise ConfigError("phase2.premier_folds must be 0 (in-sample) or >= 2")
    _check_range(cfg.tfidf.ngram_range)
    if cfg.tfidf.max_features < 1:
        raise ConfigError("tfidf.max_features must be positive")
    cfg.boost_params()
    if cfg.meta.raw_urlf_columns and cfg.feature_mode == "clf":
        raise ConfigError("meta.raw_urlf_columns needs feature_mode urlf or both")


_SECTIONS = {"data": DataConfig, "phase1": Phase1Config, "phase2": Phase2Config,
             "tfidf": TfidfConfig, "meta": MetaConfig}


def _build(cls, raw: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"[{where}] unknown keys {sorted(unknown)}")
    values = {}
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(value)
        values[key] = value
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def from_dict(raw: dict, base_dir: str | Path | None = None) -> ExperimentConfig:
    raw = dict(raw)
    sections = {}
    for name, cls in _SECTIONS.items():
        section = raw.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table")
        if name == "phase1" and "params" in section:
            section = {**section, "params": {k: dict(v) for k, v in section["params"].items()}}
        sections[name] = _build(cls, section, name)
    if base_dir is not None:
        d = sections["data"]
        resolve = lambda p: str((Path(base_dir) / p).resolve()) if p else p
        sections["data"] = replace(d, path=resolve(d.path), train=resolve(d.train), test=resolve(d.test))
    top = _build(ExperimentConfig, raw, "top level") if raw else ExperimentConfig()
    return replace(top, **sections)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(raw, path.parent)


def with_overrides(cfg: ExperimentConfig, **overrides: Any) -> ExperimentConfig:
    """Apply CLI overrides; ``None`` values are ignored.  ``k`` and ``optimizer`` reach into sections."""
    top, p1, p2 = {}, {}, {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "k":
            p1["k"] = value
        elif key == "optimizer":
            p2["optimizer"] = value
        else:
            top[key] = value
    return replace(cfg, phase1=replace(cfg.phase1, **p1), phase2=replace(cfg.phase2, **p2), **top)
