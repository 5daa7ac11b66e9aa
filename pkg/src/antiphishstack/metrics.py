"""Binary classification metrics: confusion counts, PR curve, ROC AUC, MAE and MSE."""
from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyEvaluation, LengthMismatch, SingleClassError


@dataclass(frozen=True)
class ConfusionMatrix:
    TP: int
    TN: int
    FP: int
    FN: int

    @property
    def total(self) -> int:
        return self.TP + self.TN + self.FP + self.FN


def _pair(y, other, what="predictions"):
    y = np.asarray(y)
    other = np.asarray(other)
    if y.shape != other.shape or y.ndim != 1:
        raise LengthMismatch(f"{len(y)} labels but {len(other)} {what}")
    return y, other


def confusion(y: Sequence[int], y_hat: Sequence[int]) -> ConfusionMatrix:
    y, y_hat = _pair(y, y_hat)
    y, y_hat = y.astype(bool), y_hat.astype(bool)
    return ConfusionMatrix(TP=int(np.sum(y & y_hat)), TN=int(np.sum(~y & ~y_hat)),
                           FP=int(np.sum(~y & y_hat)), FN=int(np.sum(y & ~y_hat)))


@dataclass(frozen=True)
class ClassificationScores:
    accuracy: float
    precision: float
    recall: float
    f_measure: float
    degenerate: tuple[str, ...] = ()

    def __iter__(self):
        return iter((self.accuracy, self.precision, self.recall, self.f_measure))


def classification_metrics(cm: ConfusionMatrix) -> ClassificationScores:
    """Accuracy, precision, recall and F-measure; a zero denominator yields 0 and is flagged."""
    if cm.total <= 0:
        raise EmptyEvaluation("no samples were evaluated")
    flags = []
    accuracy = (cm.TP + cm.TN) / cm.total
    if cm.TP + cm.FP:
        precision = cm.TP / (cm.TP + cm.FP)
    else:
        precision = 0.0
        flags.append("precision")
    if cm.TP + cm.FN:
        recall = cm.TP / (cm.TP + cm.FN)
    else:
        recall = 0.0
        flags.append("recall")
    if precision + recall > 0:
        f_measure = 2 * precision * recall / (precision + recall)
    else:
        f_measure = 0.0
        flags.append("f_measure")
    return ClassificationScores(accuracy, precision, recall, f_measure, tuple(flags))


def _check_binary(y: np.ndarray) -> None:
    pos = int(np.sum(y == 1))
    if pos == 0 or pos == len(y):
        raise SingleClassError("curve metrics need both classes")


def pairwise_auc(y, scores) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties counting one half."""
    y, s = _pair(y, scores, "scores")
    _check_binary(y)
    pos, neg = s[y == 1].astype(np.float64), s[y != 1].astype(np.float64)
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    not_above = np.searchsorted(neg_sorted, pos, side="right")
    wins = below.sum() + 0.5 * (not_above - below).sum()
    return float(wins / (len(pos) * len(neg)))


def _threshold_counts(y: np.ndarray, s: np.ndarray):
    """Cumulative TP/FP when predicting positive for score >= each distinct threshold (descending)."""
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], (y[order] == 1)
    last_of_group = np.r_[np.nonzero(np.diff(s_sorted))[0], len(s_sorted) - 1]
    tp = np.cumsum(y_sorted)[last_of_group]
    fp = np.cumsum(~y_sorted)[last_of_group]
    return s_sorted[last_of_group], tp, fp


def roc_auc_sweep(y, scores) -> float:
    """Trapezoidal area under the ROC curve traced by sweeping every distinct threshold."""
    y, s = _pair(y, scores, "scores")
    _check_binary(y)
    _, tp, fp = _threshold_counts(y, s.astype(np.float64))
    P, N = tp[-1], fp[-1]
    tpr = np.r_[0, tp] / P
    fpr = np.r_[0, fp] / N
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def pr_curve_and_auc(y, scores) -> tuple[list[tuple[float, float]], float]:
    """(recall, precision) at every distinct threshold in descending order, and the pairwise ROC AUC."""
    y, s = _pair(y, scores, "scores")
    _check_binary(y)
    _, tp, fp = _threshold_counts(y, s.astype(np.float64))
    P = tp[-1]
    points = [(float(t / P), float(t / (t + f))) for t, f in zip(tp, fp)]
    return points, pairwise_auc(y, s)


def mae(y, x) -> float:
    y, x = _pair(y, x, "values")
    if not len(y):
        raise LengthMismatch("MAE needs at least one value")
    return float(np.mean(np.abs(y.astype(np.float64) - x)))


def mse(y, y_hat, form: str = "mean") -> float:
    """Mean squared error; ``form="half-sum"`` gives the literal one-half sum of squares instead."""
    y, y_hat = _pair(y, y_hat, "values")
    if not len(y):
        raise LengthMismatch("MSE needs at least one value")
    sq = (y.astype(np.float64) - y_hat) ** 2
    if form == "mean":
        return float(np.mean(sq))
    if form == "half-sum":
        return float(0.5 * np.sum(sq))
    raise ValueError(f"unknown MSE form {form!r}")


@dataclass
class MetricReport:
    name: str
    accuracy: float
    precision: float
    recall: float
    f_measure: float
    auc: float
    mae: float
    mse: float
    confusion: ConfusionMatrix
    n: int
    degenerate: tuple[str, ...] = ()
    pr_points: list[tuple[float, float]] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["degenerate"] = list(self.degenerate)
        out["pr_points"] = [list(p) for p in self.pr_points]
        return out


def evaluate(name: str, y, prob, threshold: float = 0.5, mse_form: str = "mean") -> MetricReport:
    """Full report from labels and probabilities; AUC is NaN when only one class is present."""
    y, prob = _pair(y, prob, "probabilities")
    if not len(y):
        raise EmptyEvaluation(f"{name}: no samples")
    prob = prob.astype(np.float64)
    cm = confusion(y, prob >= threshold)
    scores = classification_metrics(cm)
    try:
        points, auc = pr_curve_and_auc(y, prob)
    except SingleClassError:
        points, auc = [], float("nan")
    return MetricReport(name, scores.accuracy, scores.precision, scores.recall, scores.f_measure, auc,
                        mae(y, prob), mse(y, prob, mse_form), cm, int(len(y)), scores.degenerate, points)


TSV_COLUMNS = ("model", "n", "accuracy", "precision", "recall", "f_measure", "auc", "mae", "mse",
               "TP", "TN", "FP", "FN")


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def write_metrics_tsv(reports: Sequence[MetricReport], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(TSV_COLUMNS) + "\n")
        for r in reports:
            cm = r.confusion
            row = (r.name, r.n, r.accuracy, r.precision, r.recall, r.f_measure, r.auc, r.mae, r.mse,
                   cm.TP, cm.TN, cm.FP, cm.FN)
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def write_metrics_json(report: MetricReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_metrics_json(path: str | Path) -> MetricReport:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    d["confusion"] = ConfusionMatrix(**d["confusion"])
    d["degenerate"] = tuple(d.get("degenerate", ()))
    d["pr_points"] = [tuple(p) for p in d.get("pr_points", [])]
    return MetricReport(**d)


def write_pr_points(points: Sequence[tuple[float, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("recall\tprecision\n")
        for rec, prec in points:
            fh.write(f"{rec!r}\t{prec!r}\n")
