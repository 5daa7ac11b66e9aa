"""Second-order gradient-boosted regression trees for the logistic loss.

Each round fits a tree to the gradient/hessian of the loss at the current raw
scores.  Leaves take the closed-form weight ``-G / (H + lam)``.  A split is kept
when ``0.5 * (GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam)) - gamma`` is positive.
"""
from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, LengthMismatch, SchemaMismatch, SingleClassError

HESSIAN_FLOOR = 1e-16


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


@dataclass(frozen=True)
class BoostParams:
    rounds: int = 100
    learning_rate: float = 0.1
    lam: float = 1.0
    gamma: float = 0.0
    max_depth: int = 3
    min_child_hessian: float = 1.0

    def __post_init__(self):
        if int(self.rounds) != self.rounds or self.rounds < 0:
            raise ConfigError(f"rounds must be a non-negative integer, got {self.rounds}")
        if not 0.0 <= self.learning_rate <= 1.0:
            raise ConfigError(f"learning_rate must lie in [0, 1], got {self.learning_rate}")
        if self.lam < 0 or self.gamma < 0 or self.min_child_hessian < 0:
            raise ConfigError("lam, gamma and min_child_hessian must be non-negative")
        if int(self.max_depth) != self.max_depth or self.max_depth < 0:
            raise ConfigError(f"max_depth must be a non-negative integer, got {self.max_depth}")


def grad_hess(y: np.ndarray, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logistic-loss derivatives with respect to the raw score."""
    p = _sigmoid(raw)
    return p - np.asarray(y, dtype=np.float64), np.maximum(p * (1.0 - p), HESSIAN_FLOOR)


def leaf_weight(G: float, H: float, lam: float) -> float:
    return -G / (H + lam)


def split_gain(GL: float, HL: float, GR: float, HR: float, lam: float, gamma: float) -> float:
    G, H = GL + GR, HL + HR
    return 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)) - gamma


@dataclass
class RegressionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray
    missing_left: np.ndarray
    gain: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            x = X[rows, self.feature[cur]]
            go_left = np.where(np.isnan(x), self.missing_left[cur], x <= self.threshold[cur])
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.weight[self.apply(np.asarray(X, dtype=np.float64))]


def _best_split(X, g, h, idx, params):
    """Exact greedy search; first maximum wins, i.e. lowest column then lowest threshold."""
    lam, gamma, min_h = params.lam, params.gamma, params.min_child_hessian
    best = None
    best_gain = 0.0
    for col in range(X.shape[1]):
        x = X[idx, col]
        present = ~np.isnan(x)
        rows = idx[present]
        if len(rows) < 2:
            continue
        order = np.argsort(X[rows, col], kind="stable")
        rows = rows[order]
        vals = X[rows, col]
        G_miss = float(g[idx[~present]].sum())
        H_miss = float(h[idx[~present]].sum())
        GL = np.cumsum(g[rows])[:-1]
        HL = np.cumsum(h[rows])[:-1]
        G_tot, H_tot = float(g[rows].sum()), float(h[rows].sum())
        GR, HR = G_tot - GL, H_tot - HL
        # missing values follow the child carrying more hessian mass
        miss_left = HL >= HR
        GL = GL + np.where(miss_left, G_miss, 0.0)
        HL = HL + np.where(miss_left, H_miss, 0.0)
        GR = GR + np.where(miss_left, 0.0, G_miss)
        HR = HR + np.where(miss_left, 0.0, H_miss)
        G, H = G_tot + G_miss, H_tot + H_miss
        gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)) - gamma
        ok = (vals[:-1] < vals[1:]) & (HL >= min_h) & (HR >= min_h)
        gain = np.where(ok, gain, -np.inf)
        p = int(np.argmax(gain))
        if gain[p] > best_gain:
            a, b = vals[p], vals[p + 1]
            thr = 0.5 * (a + b)
            if thr >= b:
                thr = a
            best_gain = float(gain[p])
            best = (col, float(thr), bool(miss_left[p]), best_gain)
    return best


def build_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, params: BoostParams) -> RegressionTree:
    X = np.asarray(X, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if not (len(g) == len(h) == X.shape[0]):
        raise LengthMismatch(f"g ({len(g)}), h ({len(h)}) and X ({X.shape[0]}) disagree")
    nodes: list[list] = []   # feature, threshold, left, right, weight, missing_left, gain

    def grow(idx, depth):
        node = len(nodes)
        nodes.append([-1, 0.0, -1, -1, leaf_weight(float(g[idx].sum()), float(h[idx].sum()), params.lam),
                      True, 0.0])
        if depth >= params.max_depth or len(idx) < 2:
            return node
        split = _best_split(X, g, h, idx, params)
        if split is None:
            return node
        col, thr, miss_left, gain = split
        x = X[idx, col]
        go_left = np.where(np.isnan(x), miss_left, x <= thr)
        left = grow(idx[go_left], depth + 1)
        right = grow(idx[~go_left], depth + 1)
        nodes[node][:4] = [col, thr, left, right]
        nodes[node][5:] = [miss_left, gain]
        return node

    grow(np.arange(X.shape[0]), 0)
    cols = list(zip(*nodes))
    return RegressionTree(
        feature=np.array(cols[0], dtype=np.int64),
        threshold=np.array(cols[1], dtype=np.float64),
        left=np.array(cols[2], dtype=np.int64),
        right=np.array(cols[3], dtype=np.int64),
        weight=np.array(cols[4], dtype=np.float64),
        missing_left=np.array(cols[5], dtype=bool),
        gain=np.array(cols[6], dtype=np.float64),
    )


def logistic_loss(y: np.ndarray, raw: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64)
    # log(1 + e^raw) - y * raw, computed stably
    return float(np.sum(np.logaddexp(0.0, raw) - y * raw))


@dataclass
class BoostedEnsemble:
    base_score: float
    trees: list[RegressionTree]
    params: BoostParams
    schema: list[str] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)

    def raw_score(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        raw = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            raw += self.params.learning_rate * tree.predict(X)
        return raw


def boost_fit(X: np.ndarray, y: np.ndarray, params: BoostParams = BoostParams(),
              schema: Sequence[str] | None = None) -> BoostedEnsemble:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != len(y):
        raise LengthMismatch(f"X has {X.shape[0]} rows but y has {len(y)}")
    if not (np.any(y == 1) and np.any(y == 0)):
        raise SingleClassError("boosting needs both classes")
    prior = float(y.mean())
    base = math.log(prior / (1.0 - prior))
    raw = np.full(len(y), base)
    ens = BoostedEnsemble(base, [], params, list(schema) if schema is not None
                          else [f"f{i}" for i in range(X.shape[1])])
    ens.loss_history.append(logistic_loss(y, raw))
    for _ in range(params.rounds):
        g, h = grad_hess(y, raw)
        tree = build_tree(X, g, h, params)
        raw = raw + params.learning_rate * tree.predict(X)
        ens.trees.append(tree)
        ens.loss_history.append(logistic_loss(y, raw))
    return ens


def predict_proba(ens: BoostedEnsemble, X: np.ndarray) -> np.ndarray:
    return _sigmoid(ens.raw_score(X))


def final_predict(ens: BoostedEnsemble, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(ens.schema):
        raise SchemaMismatch(f"ensemble expects columns {ens.schema}, got shape {X.shape}")
    p = predict_proba(ens, X)
    return p, (p >= 0.5).astype(np.int64)


# --- meta features ---------------------------------------------------------

@dataclass
class MetaFeatures:
    values: np.ndarray
    columns: list[str]
    provenance: np.ndarray | None = None    # per-row OOF fold id; None for test rows

    def __len__(self) -> int:
        return self.values.shape[0]


def assemble_meta_features(mean: np.ndarray, premier: Mapping[str, np.ndarray] | np.ndarray,
                           per_learner: Mapping[str, np.ndarray] | None = None,
                           extra: Mapping[str, np.ndarray] | None = None,
                           provenance: np.ndarray | None = None) -> MetaFeatures:
    """Column-stack ``mean``, the premier column(s), optional per-learner and extra columns."""
    if not isinstance(premier, Mapping):
        premier = {"premier": premier}
    columns: dict[str, np.ndarray] = {"mean": np.asarray(mean, dtype=np.float64)}
    for name, col in premier.items():
        columns[name if name.startswith("premier") else f"premier_{name}"] = np.asarray(col, dtype=np.float64)
    for name, col in (per_learner or {}).items():
        columns[f"p1_{name}"] = np.asarray(col, dtype=np.float64)
    for name, col in (extra or {}).items():
        columns[name] = np.asarray(col, dtype=np.float64)
    lengths = {len(c) for c in columns.values()}
    if provenance is not None:
        lengths.add(len(provenance))
    if len(lengths) != 1:
        raise LengthMismatch(f"meta-feature columns have differing lengths {sorted(lengths)}")
    values = np.column_stack(list(columns.values()))
    return MetaFeatures(values, list(columns), None if provenance is None else np.asarray(provenance))


# --- persistence -----------------------------------------------------------

ENSEMBLE_VERSION = "boost-ensemble/1"


def save_ensemble(ens: BoostedEnsemble, path: str | Path, stamp: str = "") -> None:
    """One node per line: ``tree_id,node_id,kind,column|weight,threshold,children``."""
    p = ens.params
    params = {"rounds": p.rounds, "learning_rate": p.learning_rate, "lam": p.lam, "gamma": p.gamma,
              "max_depth": p.max_depth, "min_child_hessian": p.min_child_hessian}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {ENSEMBLE_VERSION}\n")
        fh.write(f"# params={json.dumps(params, sort_keys=True)}\n")
        fh.write(f"# schema={json.dumps(ens.schema)}\n")
        fh.write(f"# base_score={ens.base_score!r}\n")
        fh.write(f"# stamp={stamp}\n")
        fh.write("tree_id,node_id,kind,column|weight,threshold,children\n")
        for t, tree in enumerate(ens.trees):
            for n in range(len(tree.weight)):
                if tree.feature[n] < 0:
                    fh.write(f"{t},{n},leaf,{float(tree.weight[n])!r},,\n")
                else:
                    side = "L" if tree.missing_left[n] else "R"
                    fh.write(f"{t},{n},split,{int(tree.feature[n])},{float(tree.threshold[n])!r},"
                             f"{int(tree.left[n])} {int(tree.right[n])} {side}\n")


def load_ensemble(path: str | Path) -> tuple[BoostedEnsemble, str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != f"# {ENSEMBLE_VERSION}":
        raise SchemaMismatch(f"{path}: unsupported ensemble header")
    meta = {}
    body_start = 1
    for i, line in enumerate(lines[1:], start=1):
        if not line.startswith("# "):
            body_start = i + 1      # skip the column header
            break
        key, _, value = line[2:].partition("=")
        meta[key] = value
    params = BoostParams(**json.loads(meta["params"]))
    rows_by_tree: dict[int, list[list[str]]] = {}
    for line in lines[body_start:]:
        cells = line.split(",")
        rows_by_tree.setdefault(int(cells[0]), []).append(cells)
    trees = []
    for t in sorted(rows_by_tree):
        rows = rows_by_tree[t]
        k = len(rows)
        tree = RegressionTree(np.full(k, -1, dtype=np.int64), np.zeros(k), np.full(k, -1, dtype=np.int64),
                              np.full(k, -1, dtype=np.int64), np.zeros(k), np.ones(k, dtype=bool), np.zeros(k))
        for cells in rows:
            n = int(cells[1])
            if cells[2] == "leaf":
                tree.weight[n] = float(cells[3])
            else:
                left, right, side = cells[5].split(" ")
                tree.feature[n], tree.threshold[n] = int(cells[3]), float(cells[4])
                tree.left[n], tree.right[n], tree.missing_left[n] = int(left), int(right), side == "L"
        trees.append(tree)
    ens = BoostedEnsemble(float(meta["base_score"]), trees, params, json.loads(meta["schema"]))
    return ens, meta.get("stamp", "")


def ensemble_to_arrays(ens: BoostedEnsemble) -> dict[str, np.ndarray]:
    """Flatten for the binary container (used when boosting serves as a base learner)."""
    sizes = [len(t.weight) for t in ens.trees]
    cat = lambda attr, dtype: (np.concatenate([getattr(t, attr) for t in ens.trees]).astype(dtype)  # noqa: E731
                               if ens.trees else np.zeros(0, dtype=dtype))
    p = ens.params
    return {
        "base_score": np.asarray(ens.base_score),
        "params": np.array([p.rounds, p.learning_rate, p.lam, p.gamma, p.max_depth, p.min_child_hessian]),
        "sizes": np.array(sizes, dtype=np.int64),
        "feature": cat("feature", np.int64),
        "threshold": cat("threshold", np.float64),
        "left": cat("left", np.int64),
        "right": cat("right", np.int64),
        "weight": cat("weight", np.float64),
        "missing_left": cat("missing_left", np.int64),
    }


def ensemble_from_arrays(state: Mapping[str, np.ndarray]) -> BoostedEnsemble:
    r, lr, lam, gamma, depth, mch = (float(v) for v in state["params"])
    params = BoostParams(int(r), lr, lam, gamma, int(depth), mch)
    trees, start = [], 0
    for size in state["sizes"].tolist():
        sl = slice(start, start + size)
        trees.append(RegressionTree(state["feature"][sl].astype(np.int64), state["threshold"][sl].copy(),
                                    state["left"][sl].astype(np.int64), state["right"][sl].astype(np.int64),
                                    state["weight"][sl].copy(), state["missing_left"][sl].astype(bool),
                                    np.zeros(size)))
        start += size
    return BoostedEnsemble(float(state["base_score"]), trees, params)
