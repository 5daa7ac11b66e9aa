"""End-to-end experiment: featurize, Phase I stacking, Phase II LSTM, boosted meta fusion.

Stages run in a fixed order (``STAGES``).  The test partition is wrapped in an
access audit and may only be read during ``predict``; any earlier read aborts
the run.
"""
from __future__ import annotations

import json
import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import base_learners as bl
from .boost import (BoostedEnsemble, MetaFeatures, assemble_meta_features, boost_fit, final_predict,
                    load_ensemble, save_ensemble)
from .config import ExperimentConfig
from .container import load_arrays, save_arrays
from .corpus import AccessAudit, Dataset, IngestFormat, SplitSpec, load_dataset, normalize_url, split
from .errors import AntiPhishError, ConfigError, DataError, SchemaMismatch, StageError
from .lstm import LstmModel, load_model, save_model, train_phase2
from .metrics import MetricReport, evaluate, write_metrics_tsv, write_pr_points
from .seeding import derive_seed
from .synthetic import generate_synthetic
from .tfidf import (TfidfVocabulary, default_charmap, fit_vocabulary, load_vocabulary, save_vocabulary,
                    sequences, transform_matrix)
from .urlf import URLF_FIELDS, MinMaxScaler, TokenTable, build_token_table, load_token_table, \
    save_token_table, urlf_matrix

logger = logging.getLogger(__name__)

STAGES = ("setup", "featurize", "phase1", "phase2", "meta", "predict")
TEST_OPEN_STAGES = ("predict",)


# --- featurizers -------------------------------------------------------------

@dataclass
class Featurizers:
    """Everything fitted on the training split that turns URLs into model inputs."""

    mode: str
    max_len: int
    token_table: TokenTable | None = None
    scaler: MinMaxScaler | None = None
    vocab: TfidfVocabulary | None = None

    @property
    def lstm_inputs_used(self) -> tuple[str, ...]:
        return {"urlf": ("urlf",), "clf": ("clf",), "both": ("clf", "urlf")}[self.mode]

    def urlf_scaled(self, raw: Sequence[str], norm: Sequence[str]) -> np.ndarray:
        return self.scaler.transform(urlf_matrix(raw, norm, self.token_table))

    def phase1_matrix(self, raw: Sequence[str], norm: Sequence[str]) -> np.ndarray:
        blocks = []
        if self.token_table is not None:
            blocks.append(self.urlf_scaled(raw, norm))
        if self.vocab is not None:
            blocks.append(transform_matrix(norm, self.vocab))
        return np.hstack(blocks)

    def lstm_inputs(self, raw: Sequence[str], norm: Sequence[str]) -> dict[str, np.ndarray]:
        out = {}
        for name in self.lstm_inputs_used:
            if name == "clf":
                out[name] = sequences(list(norm), default_charmap(), self.max_len)
            else:
                out[name] = self.urlf_scaled(raw, norm)
        return out


def fit_featurizers(cfg: ExperimentConfig, raw: Sequence[str], norm: Sequence[str]) -> Featurizers:
    feats = Featurizers(cfg.feature_mode, cfg.phase2.max_len)
    if cfg.feature_mode in ("urlf", "both"):
        feats.token_table = build_token_table(list(norm))
        feats.scaler = MinMaxScaler.fit(urlf_matrix(raw, norm, feats.token_table))
    if cfg.feature_mode in ("clf", "both"):
        feats.vocab = fit_vocabulary(list(norm), cfg.tfidf.ngram_range, cfg.tfidf.max_features)
    return feats


# --- data ----------------------------------------------------------------------

def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    fmt = IngestFormat(delimiter=d.delimiter)
    spec = SplitSpec(d.train_fraction, derive_seed(cfg.seed, "split"), d.stratified)
    if d.synthetic_n:
        ds = generate_synthetic(d.synthetic_n, derive_seed(cfg.seed, "synthetic"), d.synthetic_difficulty,
                                d.synthetic_label_noise)
        return split(ds, spec)
    if d.train:
        return load_dataset(d.train, fmt, "train"), load_dataset(d.test, fmt, "test")
    if d.path:
        return split(load_dataset(d.path, fmt, Path(d.path).name), spec)
    raise ConfigError("no dataset configured: set data.path, data.train/data.test or data.synthetic_n")


# --- run -------------------------------------------------------------------------

@dataclass
class RunArtifacts:
    config: ExperimentConfig
    config_hash: str
    featurizers: Featurizers
    learner_names: list[str]
    base_models: list
    oof: bl.OofMatrix
    lstms: dict[str, LstmModel]
    ensemble: BoostedEnsemble
    meta_train: MetaFeatures
    meta_test: MetaFeatures
    reports: dict[str, list[MetricReport]]
    test_urls: list[str]
    test_labels: np.ndarray
    test_prob: np.ndarray
    audit_events: list[tuple[str, str]]
    timing: dict[str, float] = field(default_factory=dict)

    @property
    def stamp(self) -> str:
        return f"{self.config_hash}:{self.config.seed}"

    def report(self, group: str, name: str) -> MetricReport:
        return next(r for r in self.reports[group] if r.name == name)


def _balanced_folds(n: int, k: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    fold = np.empty(n, dtype=np.int64)
    fold[perm] = np.arange(n) % k
    return fold


def _train_lstm(cfg: ExperimentConfig, name: str, X: np.ndarray, y: np.ndarray, *tag) -> LstmModel:
    mode = "chars" if name == "clf" else "values"
    seed = derive_seed(cfg.seed, "phase2", name, *tag)
    return train_phase2(X, y, cfg.net(mode), cfg.optimizer(name), cfg.schedule(seed))


def _meta_columns(cfg, mean, premier, per_learner, urlf_block, provenance=None) -> MetaFeatures:
    extra = None
    if cfg.meta.raw_urlf_columns:
        extra = {f"urlf_{f}": urlf_block[:, i] for i, f in enumerate(URLF_FIELDS)}
    return assemble_meta_features(mean, premier, per_learner if cfg.phase1.per_learner_columns else None,
                                  extra, provenance)


class _Stages:
    def __init__(self, audit: AccessAudit):
        self.audit = audit
        self.marks: dict[str, float] = {}
        self._t0 = time.monotonic()

    def enter(self, stage: str) -> str:
        now = time.monotonic()
        self.marks[self.audit.stage] = self.marks.get(self.audit.stage, 0.0) + now - self._t0
        self._t0 = now
        self.audit.set_stage(stage)
        logger.info("stage %s", stage)
        return stage


def run_experiment(cfg: ExperimentConfig, data: tuple[Dataset, Dataset] | None = None) -> RunArtifacts:
    """Run every stage in order; errors are re-raised as StageError naming the failing stage."""
    audit = AccessAudit()
    stages = _Stages(audit)
    stage = "setup"
    try:
        train_ds, test_ds = data if data is not None else load_data(cfg)
        if not len(train_ds) or not len(test_ds):
            raise DataError("train and test partitions must both be non-empty")
        train_ds = train_ds.watched("train", audit)
        test_ds = test_ds.watched("test", audit)

        stage = stages.enter("featurize")
        raw_tr, norm_tr, y_tr = train_ds.raw_urls(), train_ds.urls(), train_ds.labels()
        feats = fit_featurizers(cfg, raw_tr, norm_tr)
        X_tr = feats.phase1_matrix(raw_tr, norm_tr)
        lstm_in_tr = feats.lstm_inputs(raw_tr, norm_tr)
        urlf_tr = feats.urlf_scaled(raw_tr, norm_tr) if cfg.meta.raw_urlf_columns else None

        stage = stages.enter("phase1")
        specs = cfg.learner_specs()
        plan = bl.make_fold_plan(len(y_tr), cfg.phase1.k, derive_seed(cfg.seed, "folds"))
        oof = bl.kfold_oof(X_tr, y_tr, plan, specs, jobs=cfg.jobs)
        problems = bl.audit_no_leakage(oof)
        if problems:
            raise DataError("out-of-fold audit failed: " + "; ".join(problems))
        base_models = bl.fit_full(specs, X_tr, y_tr, derive_seed(cfg.seed, "phase1"), jobs=cfg.jobs)

        stage = stages.enter("phase2")
        lstms: dict[str, LstmModel] = {}
        premier_tr: dict[str, np.ndarray] = {}
        for name, X_seq in lstm_in_tr.items():
            lstms[name] = _train_lstm(cfg, name, X_seq, y_tr, "full")
            k = cfg.phase2.premier_folds
            if k == 0:
                premier_tr[name] = lstms[name].predict_proba(X_seq)
                continue
            fold = _balanced_folds(len(y_tr), k, derive_seed(cfg.seed, "premier-folds", name))
            col = np.empty(len(y_tr))
            for f in range(k):
                held = fold == f
                model = _train_lstm(cfg, name, X_seq[~held], y_tr[~held], "fold", f)
                col[held] = model.predict_proba(X_seq[held])
            premier_tr[name] = col

        stage = stages.enter("meta")
        per_learner_tr = dict(zip(oof.learners, oof.values.T))
        meta_tr = _meta_columns(cfg, bl.mean_prediction(oof), premier_tr, per_learner_tr, urlf_tr,
                                provenance=oof.fold_id)
        ensemble = boost_fit(meta_tr.values, y_tr, cfg.boost_params(), meta_tr.columns)

        stage = stages.enter("predict")
        raw_te, norm_te, y_te = test_ds.raw_urls(), test_ds.urls(), test_ds.labels()
        X_te = feats.phase1_matrix(raw_te, norm_te)
        base_te = {s.name: bl.predict_proba(m, X_te) for s, m in zip(specs, base_models)}
        mean_te = np.column_stack(list(base_te.values())).mean(axis=1)
        lstm_in_te = feats.lstm_inputs(raw_te, norm_te)
        premier_te = {name: lstms[name].predict_proba(lstm_in_te[name]) for name in lstms}
        urlf_te = feats.urlf_scaled(raw_te, norm_te) if cfg.meta.raw_urlf_columns else None
        meta_te = _meta_columns(cfg, mean_te, premier_te, base_te, urlf_te)
        prob_te, _ = final_predict(ensemble, meta_te.values)
        prob_tr, _ = final_predict(ensemble, meta_tr.values)
    except AntiPhishError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(stage, exc) from exc
    stages.enter("done")

    leaks = audit.violations("test", TEST_OPEN_STAGES)
    if leaks:
        raise StageError("audit", DataError(f"test partition read outside prediction: {leaks}"))

    form = cfg.mse_form
    reports = {
        "phase1": [evaluate(name, y_te, p, mse_form=form) for name, p in base_te.items()]
        + [evaluate("phase1_mean", y_te, mean_te, mse_form=form)],
        "phase2": [evaluate(f"lstm_{name}", y_te, p, mse_form=form) for name, p in premier_te.items()],
        "final": [evaluate("final_train", y_tr, prob_tr, mse_form=form),
                  evaluate("final_test", y_te, prob_te, mse_form=form)],
    }
    timing = {
        "train_seconds": sum(stages.marks.get(s, 0.0) for s in STAGES[:-1]),
        "test_seconds": stages.marks.get("predict", 0.0),
        **{f"stage_{s}": stages.marks.get(s, 0.0) for s in STAGES},
    }
    return RunArtifacts(cfg, cfg.config_hash(), feats, [s.name for s in specs], base_models, oof, lstms,
                        ensemble, meta_tr, meta_te, reports, list(norm_te), y_te, prob_te,
                        list(audit.events), timing)


# --- persistence -----------------------------------------------------------------

REPORT_GROUPS = ("phase1", "phase2", "final")


def run_dir(out: str | Path, config_hash: str) -> Path:
    return Path(out) / "artifacts" / config_hash


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def save_run(art: RunArtifacts, out: str | Path) -> Path:
    """Persist to ``<out>/artifacts/<config-hash>/``; only timings.json varies between reruns."""
    d = run_dir(out, art.config_hash)
    d.mkdir(parents=True, exist_ok=True)
    stamp = art.stamp
    feats = art.featurizers
    _write_json(d / "config.json", {"config": art.config.canonical(), "config_hash": art.config_hash,
                                    "stamp": stamp})
    _write_json(d / "featurizers.json", {"mode": feats.mode, "max_len": feats.max_len, "stamp": stamp,
                                         "learners": art.learner_names, "lstms": sorted(art.lstms)})
    if feats.token_table is not None:
        save_token_table(feats.token_table, d / "token_table.tsv", stamp)
        save_arrays(d / "scaler", {"lo": feats.scaler.lo, "hi": feats.scaler.hi}, {"stamp": stamp})
    if feats.vocab is not None:
        save_vocabulary(feats.vocab, d / "vocabulary.tsv", stamp)
    for name, model in zip(art.learner_names, art.base_models):
        save_arrays(d / f"phase1_{name}", bl.model_state(model), {"learner": name, "stamp": stamp})
    bl.save_oof(art.oof, d / "oof.csv")
    for name, model in art.lstms.items():
        save_model(model, d / f"lstm_{name}", stamp)
        model.log.save(d / f"train_log_{name}.tsv")
    save_ensemble(art.ensemble, d / "ensemble.txt", stamp)
    _save_meta(art.meta_train, d / "meta_train.csv")
    _save_meta(art.meta_test, d / "meta_test.csv")
    with open(d / "predictions_test.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("url\tlabel\tprob\tpredicted\n")
        for url, y, p in zip(art.test_urls, art.test_labels, art.test_prob):
            fh.write(f"{url}\t{int(y)}\t{float(p)!r}\t{int(p >= 0.5)}\n")
    for group in REPORT_GROUPS:
        _write_json(d / f"metrics_{group}.json", [r.as_dict() for r in art.reports[group]])
    _write_json(d / "audit.json", {"events": [list(e) for e in art.audit_events],
                                   "test_open_stages": list(TEST_OPEN_STAGES), "violations": []})
    _write_json(d / "timings.json", art.timing)
    return d


def _save_meta(meta: MetaFeatures, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["row", "fold", *meta.columns]) + "\n")
        for i, row in enumerate(meta.values):
            fold = "" if meta.provenance is None else str(int(meta.provenance[i]))
            fh.write(",".join([str(i), fold, *(repr(float(v)) for v in row)]) + "\n")


def load_reports(d: str | Path) -> dict[str, list[MetricReport]]:
    """Whatever metric groups are present in a run directory."""
    from .metrics import ConfusionMatrix

    out = {}
    for group in REPORT_GROUPS:
        path = Path(d) / f"metrics_{group}.json"
        if path.is_file():
            rows = json.loads(path.read_text(encoding="utf-8"))
            for r in rows:
                r["confusion"] = ConfusionMatrix(**r["confusion"])
                r["degenerate"] = tuple(r["degenerate"])
                r["pr_points"] = [tuple(p) for p in r["pr_points"]]
            out[group] = [MetricReport(**r) for r in rows]
    return out


def write_report(d: str | Path, out: str | Path) -> list[str]:
    """metrics_<group>.tsv and pr_points_<model>.tsv; returns warnings for missing pieces."""
    d, out = Path(d), Path(out)
    if not (d / "config.json").is_file():
        raise DataError(f"no run artifacts in {d}")
    out.mkdir(parents=True, exist_ok=True)
    reports = load_reports(d)
    warnings = []
    if not (d / "ensemble.txt").is_file():
        reports.pop("final", None)
        warnings.append("meta model missing: final table skipped")
    for group in REPORT_GROUPS:
        if group not in reports:
            if group != "final":
                warnings.append(f"{group} metrics missing")
            continue
        write_metrics_tsv(reports[group], out / f"metrics_{group}.tsv")
        for r in reports[group]:
            if r.pr_points:
                write_pr_points(r.pr_points, out / f"pr_points_{r.name}.tsv")
    if not reports:
        raise DataError(f"no metric files in {d}")
    return warnings


# --- inference from persisted artifacts -------------------------------------------

@dataclass
class Predictor:
    config: ExperimentConfig | None
    config_hash: str
    featurizers: Featurizers
    learner_names: list[str]
    base_models: list
    lstms: dict[str, LstmModel]
    ensemble: BoostedEnsemble
    raw_config: dict

    def predict(self, raw_urls: Sequence[str]) -> tuple[list[str], np.ndarray, np.ndarray]:
        """Normalized URLs, stacked probabilities and 0/1 labels."""
        raw = list(raw_urls)
        norm = [normalize_url(u) for u in raw]
        if not raw:
            return [], np.zeros(0), np.zeros(0, dtype=np.int64)
        feats = self.featurizers
        X = feats.phase1_matrix(raw, norm)
        base = {n: bl.predict_proba(m, X) for n, m in zip(self.learner_names, self.base_models)}
        mean = np.column_stack(list(base.values())).mean(axis=1)
        lstm_in = feats.lstm_inputs(raw, norm)
        premier = {n: self.lstms[n].predict_proba(lstm_in[n]) for n in self.lstms}
        meta_cfg = self.raw_config["meta"]
        extra = None
        if meta_cfg["raw_urlf_columns"]:
            block = feats.urlf_scaled(raw, norm)
            extra = {f"urlf_{f}": block[:, i] for i, f in enumerate(URLF_FIELDS)}
        per_learner = base if self.raw_config["phase1"]["per_learner_columns"] else None
        meta = assemble_meta_features(mean, premier, per_learner, extra)
        if meta.columns != self.ensemble.schema:
            raise SchemaMismatch(f"meta columns {meta.columns} do not match ensemble {self.ensemble.schema}")
        prob, label = final_predict(self.ensemble, meta.values)
        return norm, prob, label


def _check_stamp(what: str, stamp: str, expected: str) -> None:
    if stamp != expected:
        raise SchemaMismatch(f"{what} was produced by run {stamp or '?'}, expected {expected}")


def load_predictor(d: str | Path) -> Predictor:
    d = Path(d)
    cfg_path = d / "config.json"
    if not cfg_path.is_file():
        raise SchemaMismatch(f"no config.json in {d}")
    info = json.loads(cfg_path.read_text(encoding="utf-8"))
    expected = info["stamp"]
    fz = json.loads((d / "featurizers.json").read_text(encoding="utf-8"))
    _check_stamp("featurizers.json", fz["stamp"], expected)
    feats = Featurizers(fz["mode"], fz["max_len"])
    try:
        if fz["mode"] in ("urlf", "both"):
            feats.token_table, stamp = load_token_table(d / "token_table.tsv")
            _check_stamp("token table", stamp, expected)
            arrays, meta = load_arrays(d / "scaler")
            _check_stamp("scaler", meta.get("stamp", ""), expected)
            feats.scaler = MinMaxScaler(arrays["lo"], arrays["hi"])
        if fz["mode"] in ("clf", "both"):
            feats.vocab, stamp = load_vocabulary(d / "vocabulary.tsv")
            _check_stamp("vocabulary", stamp, expected)
        models = []
        for name in fz["learners"]:
            arrays, meta = load_arrays(d / f"phase1_{name}")
            _check_stamp(f"phase1 model {name}", meta.get("stamp", ""), expected)
            models.append(bl.model_from_state(name, arrays))
        lstms = {}
        for name in fz["lstms"]:
            lstms[name], stamp = load_model(d / f"lstm_{name}")
            _check_stamp(f"LSTM {name}", stamp, expected)
        ensemble, stamp = load_ensemble(d / "ensemble.txt")
        _check_stamp("ensemble", stamp, expected)
    except FileNotFoundError as exc:
        raise SchemaMismatch(f"incomplete artifacts: {exc.filename} missing") from None
    return Predictor(None, info["config_hash"], feats, list(fz["learners"]), models, lstms, ensemble,
                     info["config"])
