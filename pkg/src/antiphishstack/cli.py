"""``antiphish`` command line: ingest, featurize, train, evaluate, predict, report.

Exit codes: 0 ok, 1 unexpected failure, 2 configuration, 3 data, 4 numeric, 5 model/schema mismatch.
Data goes to stdout; diagnostics (including the config hash) go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config, with_overrides
from .corpus import Dataset, IngestFormat, dedupe, load_dataset, merge, write_dataset
from .errors import AntiPhishError, ConfigError, DataError, NumericError, SchemaError, StageError
from .metrics import evaluate, write_metrics_json, write_metrics_tsv

log = logging.getLogger("antiphishstack")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_SCHEMA = 0, 1, 2, 3, 4, 5


def exit_code_for(exc: BaseException) -> int:
    while isinstance(exc, StageError):
        exc = exc.cause
    for family, code in ((ConfigError, EXIT_CONFIG), (SchemaError, EXIT_SCHEMA),
                         (NumericError, EXIT_NUMERIC), (DataError, EXIT_DATA)):
        if isinstance(exc, family):
            return code
    return EXIT_FAILURE


def _emit_hash(config_hash: str) -> None:
    print(f"config-hash: {config_hash}", file=sys.stderr)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return with_overrides(cfg, seed=args.seed, jobs=args.jobs, feature_mode=args.feature_mode,
                          optimizer=args.optimizer, k=args.k, mse_form=args.mse_form)


def _artifact_hash(model_dir: Path) -> str:
    path = Path(model_dir) / "config.json"
    if not path.is_file():
        raise DataError(f"no run artifacts in {model_dir}")
    return json.loads(path.read_text(encoding="utf-8"))["config_hash"]


# --- verbs -----------------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = _config(args)
    _emit_hash(cfg.config_hash())
    fmt = IngestFormat(delimiter=args.delimiter or cfg.data.delimiter)
    parts = [load_dataset(p, fmt, Path(p).name) for p in args.inputs]
    ds = Dataset(tuple(dedupe(merge(parts).records)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out / "dataset.csv")
    benign, phishing = ds.class_counts
    print(f"records\t{len(ds)}\nbenign\t{benign}\nphishing\t{phishing}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    from .pipeline import fit_featurizers, load_data
    from .tfidf import save_vocabulary
    from .urlf import dump_features, extract_urlf, save_token_table

    cfg = _config(args)
    h = cfg.config_hash()
    _emit_hash(h)
    train, _ = load_data(cfg)
    raw, norm = train.raw_urls(), train.urls()
    feats = fit_featurizers(cfg, raw, norm)
    out = Path(args.out) / "features" / h
    out.mkdir(parents=True, exist_ok=True)
    stamp = f"{h}:{cfg.seed}"
    if feats.token_table is not None:
        save_token_table(feats.token_table, out / "token_table.tsv", stamp)
        dump_features(out / "urlf_train.csv", norm, (extract_urlf(r, u, feats.token_table) for r, u in zip(raw, norm)))
    if feats.vocab is not None:
        save_vocabulary(feats.vocab, out / "vocabulary.tsv", stamp)
    print(f"train_records\t{len(train)}\noutput\t{out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import save_run, run_experiment, write_report

    cfg = _config(args)
    _emit_hash(cfg.config_hash())
    art = run_experiment(cfg)
    d = save_run(art, args.out)
    for w in write_report(d, d):
        log.warning(w)
    print("group\tmodel\taccuracy\tprecision\trecall\tf_measure\tauc")
    for group, reports in art.reports.items():
        for r in reports:
            print(f"{group}\t{r.name}\t{r.accuracy:.4f}\t{r.precision:.4f}\t{r.recall:.4f}\t{r.f_measure:.4f}\t{r.auc:.4f}")
    print(f"artifacts: {d}", file=sys.stderr)
    return EXIT_OK


def _model_dir(args) -> Path:
    if not args.model:
        raise ConfigError("--model DIR is required")
    return Path(args.model)


def cmd_evaluate(args) -> int:
    from .pipeline import load_predictor

    model_dir = _model_dir(args)
    _emit_hash(_artifact_hash(model_dir))
    if not args.input:
        raise ConfigError("--input FILE (labelled URLs) is required")
    ds = load_dataset(args.input, IngestFormat(delimiter=args.delimiter or ","), Path(args.input).name)
    pred = load_predictor(model_dir)
    _, prob, _ = pred.predict(ds.raw_urls())
    report = evaluate("final_eval", ds.labels(), prob, mse_form=args.mse_form or "mean")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_tsv([report], out / "metrics_eval.tsv")
    write_metrics_json(report, out / "metrics_eval.json")
    print(f"accuracy\t{report.accuracy:.6f}\nprecision\t{report.precision:.6f}\nrecall\t{report.recall:.6f}"
          f"\nf_measure\t{report.f_measure:.6f}\nauc\t{report.auc:.6f}\nmae\t{report.mae:.6f}\nmse\t{report.mse:.6f}")
    return EXIT_OK


def _read_urls(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                url = line.strip()
                if url and not url.startswith("#"):
                    yield url
    except FileNotFoundError:
        raise DataError(f"input file not found: {path}") from None


def cmd_predict(args) -> int:
    from .pipeline import load_predictor

    model_dir = _model_dir(args)
    _emit_hash(_artifact_hash(model_dir))
    if bool(args.url) == bool(args.input):
        raise ConfigError("give exactly one of --url or --input")
    pred = load_predictor(model_dir)
    urls = [args.url] if args.url else _read_urls(args.input)
    batch: list[str] = []

    def flush():
        _, prob, label = pred.predict(batch)
        for url, p, lab in zip(batch, prob, label):
            sys.stdout.write(f"{url}\t{float(p):.6f}\t{int(lab)}\n")
        batch.clear()

    for url in urls:
        batch.append(url)
        if len(batch) >= args.batch_size:
            flush()
    if batch:
        flush()
    return EXIT_OK


def cmd_report(args) -> int:
    from .pipeline import write_report

    model_dir = _model_dir(args)
    _emit_hash(_artifact_hash(model_dir))
    out = Path(args.out) if args.out_given else model_dir
    for w in write_report(model_dir, out):
        print(f"warning: {w}", file=sys.stderr)
    for name in sorted(p.name for p in out.glob("metrics_*.tsv")):
        print(out / name)
    return EXIT_OK


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment TOML file")
    common.add_argument("--out", default=None, help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, default=None, help="master seed (default 42)")
    common.add_argument("--jobs", type=int, default=None, help="parallel workers inside a stage")
    common.add_argument("--feature-mode", choices=("urlf", "clf", "both"), default=None)
    common.add_argument("--optimizer", choices=("adadelta", "adam", "rmsprop", "adagrad", "sgd"), default=None)
    common.add_argument("--k", type=int, default=None, help="fold count, 3..10")
    common.add_argument("--mse-form", choices=("mean", "half-sum"), default=None)

    parser = argparse.ArgumentParser(prog="antiphish", description="Stacked phishing URL detection.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("ingest", parents=[common], help="normalize, deduplicate and merge labelled URL files")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--delimiter", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", parents=[common], help="fit featurizers on the training split")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[common], help="run the full experiment and persist artifacts")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a labelled file with a trained model")
    p.add_argument("--model", required=True, help="run directory (artifacts/<config-hash>)")
    p.add_argument("--input", help="labelled URL file")
    p.add_argument("--delimiter", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="print url, probability and label per URL")
    p.add_argument("--model", required=True, help="run directory (artifacts/<config-hash>)")
    p.add_argument("--input", help="file with one URL per line")
    p.add_argument("--url", help="a single URL")
    p.add_argument("--batch-size", type=int, default=256)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", parents=[common], help="render metric tables and PR points")
    p.add_argument("--model", required=True, help="run directory (artifacts/<config-hash>)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.out_given = args.out is not None
    if args.out is None:
        args.out = "."
    level = os.environ.get("ANTIPHISH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AntiPhishError as exc:
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    except KeyError as exc:    # UnknownToken and friends
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
