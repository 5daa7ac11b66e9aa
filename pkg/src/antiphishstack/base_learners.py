"""Phase I: classical learners, k-fold out-of-fold stacking and the mean prediction.

Every learner answers ``predict_proba`` with a phishing probability in [0, 1]:
margin models squash their score through the logistic function, the tree
reports leaf class fractions and KNN reports vote fractions.
"""
from __future__ import annotations

import logging
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from .errors import (
    ArityMismatch,
    ConfigError,
    NonFiniteFeature,
    SingleClassError,
    StageError,
    TooFewSamples,
)
from .seeding import derive_seed

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-9


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LearnerKind(str, Enum):
    LINEAR_SVM = "linear_svm"
    GAUSSIAN_NB = "gaussian_nb"
    DECISION_TREE = "decision_tree"
    LOGISTIC_REGRESSION = "logistic_regression"
    KNN = "knn"
    SMO = "smo"
    XGBOOST = "xgboost"


CLASSICAL_KINDS = (
    LearnerKind.LINEAR_SVM,
    LearnerKind.GAUSSIAN_NB,
    LearnerKind.DECISION_TREE,
    LearnerKind.LOGISTIC_REGRESSION,
    LearnerKind.KNN,
    LearnerKind.SMO,
)

DEFAULT_PARAMS: dict[LearnerKind, dict[str, Any]] = {
    LearnerKind.LINEAR_SVM: {"learning_rate": 0.1, "epochs": 200, "reg": 1e-3},
    LearnerKind.GAUSSIAN_NB: {},
    LearnerKind.DECISION_TREE: {"max_depth": 10, "min_leaf": 1},
    LearnerKind.LOGISTIC_REGRESSION: {"learning_rate": 0.5, "epochs": 300, "reg": 1e-3},
    LearnerKind.KNN: {"k": 5},
    LearnerKind.SMO: {"C": 1.0, "tol": 1e-3, "max_passes": 5, "max_sweeps": 50},
    LearnerKind.XGBOOST: {"rounds": 50, "learning_rate": 0.3, "max_depth": 4, "lam": 1.0, "gamma": 0.0},
}

_INT_PARAMS = {"epochs", "max_depth", "min_leaf", "k", "max_passes", "max_sweeps", "rounds"}
_NONNEG_PARAMS = {"reg", "gamma", "lam", "tol"}


@dataclass(frozen=True)
class LearnerSpec:
    kind: LearnerKind
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        kind = LearnerKind(self.kind)
        object.__setattr__(self, "kind", kind)
        unknown = set(self.params) - set(DEFAULT_PARAMS[kind])
        if unknown:
            raise ConfigError(f"{kind.value}: unknown hyperparameters {sorted(unknown)}")
        merged = {**DEFAULT_PARAMS[kind], **self.params}
        for key, value in merged.items():
            if key in _INT_PARAMS:
                if int(value) != value or value < (0 if key == "max_depth" else 1):
                    raise ConfigError(f"{kind.value}.{key} must be a positive integer, got {value!r}")
                merged[key] = int(value)
            elif key in _NONNEG_PARAMS:
                if not value >= 0:
                    raise ConfigError(f"{kind.value}.{key} must be >= 0, got {value!r}")
            elif not value > 0:
                raise ConfigError(f"{kind.value}.{key} must be > 0, got {value!r}")
        object.__setattr__(self, "params", merged)

    @property
    def name(self) -> str:
        return self.kind.value

    def build(self, seed: int) -> Model:
        return _FACTORIES[self.kind](seed=seed, **self.params)


def default_specs(include_xgboost: bool = False) -> list[LearnerSpec]:
    kinds = CLASSICAL_KINDS + ((LearnerKind.XGBOOST,) if include_xgboost else ())
    return [LearnerSpec(k) for k in kinds]


class Model(Protocol):
    name: str

    def fit(self, X: np.ndarray, y: np.ndarray) -> Model: ...

    def predict_proba(self, X: np.ndarray) -> np.ndarray: ...


def check_training_data(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ArityMismatch(f"X has shape {X.shape} but y has {y.shape[0]} labels")
    if not np.isfinite(X).all():
        raise NonFiniteFeature("feature matrix contains NaN or infinity")
    if set(np.unique(y).tolist()) != {0, 1}:
        raise SingleClassError("training labels must contain both classes 0 and 1")
    return X, y


class _Fitted:
    """Shared arity bookkeeping."""

    name = "model"
    n_features: int = -1

    def _check_query(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ArityMismatch(f"{self.name}: expected {self.n_features} features, got shape {X.shape}")
        return X

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)


class _Standardized(_Fitted):
    """Linear models train on z-scored columns; the transform is part of the model."""

    mu: np.ndarray
    sd: np.ndarray

    def _fit_scaling(self, X):
        self.mu = X.mean(axis=0)
        sd = X.std(axis=0)
        self.sd = np.where(sd > 1e-12, sd, 1.0)
        return (X - self.mu) / self.sd

    def _scale(self, X):
        return (X - self.mu) / self.sd


class LinearSVM(_Standardized):
    """Hinge loss + L2, full-batch subgradient descent with a 1/sqrt(t) step."""

    name = "linear_svm"

    def __init__(self, learning_rate=0.1, epochs=200, reg=1e-3, seed=0):
        self.learning_rate, self.epochs, self.reg = learning_rate, epochs, reg
        self.w = np.zeros(0)
        self.b = 0.0

    def fit(self, X, y):
        X, y = check_training_data(X, y)
        self.n_features = X.shape[1]
        Z = self._fit_scaling(X)
        s = 2.0 * y - 1.0
        n = len(y)
        w, b = np.zeros(Z.shape[1]), 0.0
        for t in range(1, self.epochs + 1):
            active = s * (Z @ w + b) < 1.0
            grad_w = self.reg * w - (s[active] @ Z[active]) / n
            grad_b = -s[active].sum() / n
            step = self.learning_rate / np.sqrt(t)
            w -= step * grad_w
            b -= step * grad_b
        self.w, self.b = w, float(b)
        return self

    def decision_function(self, X):
        return self._scale(self._check_query(X)) @ self.w + self.b

    def predict_proba(self, X):
        return sigmoid(self.decision_function(X))


class LogisticRegression(_Standardized):
    """Mean log-loss + L2, full-batch gradient descent."""

    name = "logistic_regression"

    def __init__(self, learning_rate=0.5, epochs=300, reg=1e-3, seed=0):
        self.learning_rate, self.epochs, self.reg = learning_rate, epochs, reg
        self.w = np.zeros(0)
        self.b = 0.0

    def fit(self, X, y):
        X, y = check_training_data(X, y)
        self.n_features = X.shape[1]
        Z = self._fit_scaling(X)
        n = len(y)
        w, b = np.zeros(Z.shape[1]), 0.0
        for _ in range(self.epochs):
            r = sigmoid(Z @ w + b) - y
            w -= self.learning_rate * (Z.T @ r / n + self.reg * w)
            b -= self.learning_rate * r.mean()
        self.w, self.b = w, float(b)
        return self

    def predict_proba(self, X):
        return sigmoid(self._scale(self._check_query(X)) @ self.w + self.b)


class GaussianNB(_Fitted):
    name = "gaussian_nb"

    def __init__(self, seed=0):
        self.log_prior = np.zeros(2)
        self.means = np.zeros((2, 0))
        self.vars = np.ones((2, 0))

    def fit(self, X, y):
        X, y = check_training_data(X, y)
        self.n_features = X.shape[1]
        self.log_prior = np.log(np.array([np.mean(y == 0), np.mean(y == 1)]))
        self.means = np.vstack([X[y == c].mean(axis=0) for c in (0, 1)])
        self.vars = np.maximum(np.vstack([X[y == c].var(axis=0) for c in (0, 1)]), VARIANCE_FLOOR)
        return self

    def predict_proba(self, X):
        X = self._check_query(X)
        jll = []
        for c in (0, 1):
            quad = ((X - self.means[c]) ** 2 / self.vars[c]).sum(axis=1)
            jll.append(self.log_prior[c] - 0.5 * (np.log(2 * np.pi * self.vars[c]).sum() + quad))
        return sigmoid(jll[1] - jll[0])


class KNN(_Fitted):
    """Vote fraction among the k nearest (Euclidean) training rows; ties by row order."""

    name = "knn"

    def __init__(self, k=5, seed=0):
        self.k = k
        self.X = np.zeros((0, 0))
        self.y = np.zeros(0)

    def fit(self, X, y):
        X, y = check_training_data(X, y)
        self.n_features = X.shape[1]
        self.X, self.y = X, y.astype(np.float64)
        return self

    def predict_proba(self, X, chunk: int = 512):
        X = self._check_query(X)
        k = min(self.k, len(self.y))
        train_sq = (self.X ** 2).sum(axis=1)
        out = np.empty(len(X))
        for start in range(0, len(X), chunk):
            Q = X[start:start + chunk]
            d2 = (Q ** 2).sum(axis=1)[:, None] + train_sq[None, :] - 2.0 * Q @ self.X.T
            np.maximum(d2, 0.0, out=d2)
            nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
            out[start:start + chunk] = self.y[nearest].mean(axis=1)
        return out


class SMO(_Standardized):
    """Simplified sequential minimal optimization, linear kernel.

    The primal weight vector is kept in sync with the duals, so each pair
    update costs O(features) instead of O(samples x features).
    """

    name = "smo"

    def __init__(self, C=1.0, tol=1e-3, max_passes=5, max_sweeps=50, seed=0):
        self.C, self.tol, self.max_passes, self.max_sweeps = C, tol, max_passes, max_sweeps
        self.seed = seed
        self.w = np.zeros(0)
        self.b = 0.0

    def fit(self, X, y):
        X, y = check_training_data(X, y)
        self.n_features = X.shape[1]
        Z = self._fit_scaling(X)
        s = 2.0 * y - 1.0
        n = len(s)
        rng = np.random.default_rng(self.seed)
        alpha = np.zeros(n)
        w = np.zeros(Z.shape[1])
        b = 0.0
        sq = (Z ** 2).sum(axis=1)
        C, tol = self.C, self.tol
        passes = sweeps = 0
        while passes < self.max_passes and sweeps < self.max_sweeps:
            changed = 0
            partners = rng.integers(0, n - 1, size=n)
            for i in range(n):
                e_i = Z[i] @ w + b - s[i]
                if not ((s[i] * e_i < -tol and alpha[i] < C) or (s[i] * e_i > tol and alpha[i] > 0)):
                    continue
                j = partners[i] + (partners[i] >= i)
                e_j = Z[j] @ w + b - s[j]
                a_i, a_j = alpha[i], alpha[j]
                if s[i] != s[j]:
                    lo, hi = max(0.0, a_j - a_i), min(C, C + a_j - a_i)
                else:
                    lo, hi = max(0.0, a_i + a_j - C), min(C, a_i + a_j)
                if lo >= hi:
                    continue
                k_ij = Z[i] @ Z[j]
                eta = 2.0 * k_ij - sq[i] - sq[j]
                if eta >= 0:
                    continue
                new_j = min(hi, max(lo, a_j - s[j] * (e_i - e_j) / eta))
                if abs(new_j - a_j) < 1e-5:
                    continue
                new_i = a_i + s[i] * s[j] * (a_j - new_j)
                d_i, d_j = new_i - a_i, new_j - a_j
                b1 = b - e_i - s[i] * d_i * sq[i] - s[j] * d_j * k_ij
                b2 = b - e_j - s[i] * d_i * k_ij - s[j] * d_j * sq[j]
                if 0 < new_i < C:
                    b = b1
                elif 0 < new_j < C:
                    b = b2
                else:
                    b = 0.5 * (b1 + b2)
                w += s[i] * d_i * Z[i] + s[j] * d_j * Z[j]
                alpha[i], alpha[j] = new_i, new_j
                changed += 1
            sweeps += 1
            passes = passes + 1 if changed == 0 else 0
        self.w, self.b = w, float(b)
        self.n_support = int((alpha > 0).sum())
        return self

    def decision_function(self, X):
        return self._scale(self._check_query(X)) @ self.w + self.b

    def predict_proba(self, X):
        return sigmoid(self.decision_function(X))


class DecisionTree(_Fitted):
    """CART with Gini impurity and exact split search; leaves hold class fractions."""

    name = "decision_tree"

    def __init__(self, max_depth=10, min_leaf=1, seed=0, column_chunk: int = 1024):
        self.max_depth, self.min_leaf = max_depth, min_leaf
        self.column_chunk = column_chunk
        self.feature = np.zeros(0, dtype=np.int64)
        self.threshold = np.zeros(0)
        self.left = np.zeros(0, dtype=np.int64)
        self.right = np.zeros(0, dtype=np.int64)
        self.value = np.zeros(0)

    def fit(self, X, y):
        X, y = check_training_data(X, y)
        self.n_features = X.shape[1]
        n, d = X.shape
        presort = np.argsort(X, axis=0, kind="stable")
        yf = y.astype(np.float64)
        feature, threshold, left, right, value = [], [], [], [], []

        def new_node(idx):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(float(yf[idx].mean()))
            return len(value) - 1

        root = new_node(np.arange(n))
        stack = [(root, np.arange(n), 0)]
        while stack:
            node, idx, depth = stack.pop()
            split = None
            if depth < self.max_depth and len(idx) >= 2 * self.min_leaf and 0.0 < value[node] < 1.0:
                split = self._best_split(X, yf, presort, idx)
            if split is None:
                continue
            col, thr = split
            go_left = X[idx, col] <= thr
            l_idx, r_idx = idx[go_left], idx[~go_left]
            feature[node], threshold[node] = col, thr
            left[node], right[node] = new_node(l_idx), new_node(r_idx)
            # right pushed first so the left subtree is numbered first
            stack.append((right[node], r_idx, depth + 1))
            stack.append((left[node], l_idx, depth + 1))

        self.feature = np.array(feature, dtype=np.int64)
        self.threshold = np.array(threshold)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.value = np.array(value)
        return self

    def _sorted_columns(self, X, presort, idx, cols):
        m, n = len(idx), X.shape[0]
        if m * 8 > n:
            mask = np.zeros(n, dtype=bool)
            mask[idx] = True
            ps = presort[:, cols]
            return ps.T[mask[ps].T].reshape(len(cols), m)
        order = np.argsort(X[np.ix_(idx, cols)], axis=0, kind="stable")
        return idx[order].T

    def _best_split(self, X, yf, presort, idx):
        m = len(idx)
        pos = yf[idx].sum()
        parent = (pos ** 2 + (m - pos) ** 2) / m
        n_left = np.arange(1, m, dtype=np.float64)
        n_right = m - n_left
        size_ok = (n_left >= self.min_leaf) & (n_right >= self.min_leaf)
        best_score, best = parent + 1e-12, None
        for start in range(0, X.shape[1], self.column_chunk):
            cols = np.arange(start, min(start + self.column_chunk, X.shape[1]))
            order = self._sorted_columns(X, presort, idx, cols)
            vals = X[order, cols[:, None]]
            pos_l = np.cumsum(yf[order], axis=1)[:, :-1]
            neg_l = n_left - pos_l
            pos_r, neg_r = pos - pos_l, (m - pos) - neg_l
            score = (pos_l ** 2 + neg_l ** 2) / n_left + (pos_r ** 2 + neg_r ** 2) / n_right
            valid = (vals[:, :-1] < vals[:, 1:]) & size_ok
            score = np.where(valid, score, -np.inf)
            flat = int(np.argmax(score))
            c, p = divmod(flat, m - 1)
            if score[c, p] > best_score:
                a, b = vals[c, p], vals[c, p + 1]
                thr = 0.5 * (a + b)
                if thr >= b:
                    thr = a
                best_score, best = score[c, p], (int(cols[c]), float(thr))
        return best

    def apply(self, X):
        X = self._check_query(X)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return node

    def predict_proba(self, X):
        return self.value[self.apply(X)]

    @property
    def depth(self) -> int:
        depths = np.zeros(len(self.value), dtype=np.int64)
        for node in range(len(self.value)):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[self.right[node]] = depths[node] + 1
        return int(depths.max())


class BoostedTrees(_Fitted):
    """Gradient-boosted trees used as an optional seventh Phase I learner."""

    name = "xgboost"

    def __init__(self, rounds=50, learning_rate=0.3, max_depth=4, lam=1.0, gamma=0.0, seed=0):
        from .boost import BoostParams

        self.params = BoostParams(rounds=rounds, learning_rate=learning_rate, max_depth=max_depth,
                                  lam=lam, gamma=gamma)
        self.ensemble = None

    def fit(self, X, y):
        from .boost import boost_fit

        X, y = check_training_data(X, y)
        self.n_features = X.shape[1]
        self.ensemble = boost_fit(X, y, self.params)
        return self

    def predict_proba(self, X):
        from .boost import predict_proba

        return predict_proba(self.ensemble, self._check_query(X))


_FACTORIES: dict[LearnerKind, Callable[..., Model]] = {
    LearnerKind.LINEAR_SVM: LinearSVM,
    LearnerKind.GAUSSIAN_NB: GaussianNB,
    LearnerKind.DECISION_TREE: DecisionTree,
    LearnerKind.LOGISTIC_REGRESSION: LogisticRegression,
    LearnerKind.KNN: KNN,
    LearnerKind.SMO: SMO,
    LearnerKind.XGBOOST: BoostedTrees,
}


def train_base(spec: LearnerSpec, X: np.ndarray, y: np.ndarray, seed: int = 0) -> Model:
    return spec.build(seed).fit(X, y)


def predict_proba(model: Model, X: np.ndarray) -> np.ndarray:
    return np.clip(model.predict_proba(X), 0.0, 1.0)


# --- folds and out-of-fold stacking ---------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    fold_id: np.ndarray

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_id != fold)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_id == fold)


def validate_k(k: int) -> int:
    if int(k) != k or not 3 <= k <= 10:
        raise ConfigError(f"k must be in 3..10, got {k}")
    return int(k)


def make_fold_plan(n: int, k: int, seed: int) -> FoldPlan:
    k = validate_k(k)
    if n < k:
        raise TooFewSamples(f"{n} samples cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    fold_id = np.empty(n, dtype=np.int64)
    fold_id[perm] = np.arange(n) % k
    return FoldPlan(k, seed, fold_id)


@dataclass
class OofMatrix:
    """Out-of-fold probabilities plus the provenance needed to audit them."""

    values: np.ndarray                      # (samples, learners)
    learners: list[str]
    fold_id: np.ndarray                     # fold holding each sample
    trained_on: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)
    scored: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)

    @property
    def n_models(self) -> int:
        return len(self.trained_on)


def _fit_job(spec, X, y, plan, fold, seed):
    train_idx = plan.train_indices(fold)
    test_idx = plan.test_indices(fold)
    try:
        model = spec.build(seed).fit(X[train_idx], y[train_idx])
    except Exception as exc:
        raise StageError(f"phase1:{spec.name}:fold{fold}", exc) from exc
    return train_idx, test_idx, predict_proba(model, X[test_idx])


def kfold_oof(X: np.ndarray, y: np.ndarray, plan: FoldPlan, specs: Sequence[LearnerSpec],
              jobs: int = 1) -> OofMatrix:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if len(plan.fold_id) != len(y) or X.shape[0] != len(y):
        raise ArityMismatch("fold plan, X and y disagree on the sample count")
    tasks = [(spec, fold) for spec in specs for fold in range(plan.k)]

    def run(task):
        spec, fold = task
        return _fit_job(spec, X, y, plan, fold, derive_seed(plan.seed, spec.name, fold))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    names = [s.name for s in specs]
    values = np.full((len(y), len(specs)), np.nan)
    oof = OofMatrix(values, names, plan.fold_id.copy())
    for (spec, fold), (train_idx, test_idx, proba) in zip(tasks, results):
        col = names.index(spec.name)
        values[test_idx, col] = proba
        oof.trained_on[(spec.name, fold)] = train_idx
        oof.scored[(spec.name, fold)] = test_idx
    return oof


def audit_no_leakage(oof: OofMatrix) -> list[str]:
    """Return human-readable violations; an empty list means the matrix is clean."""
    problems = []
    n = oof.values.shape[0]
    for col, name in enumerate(oof.learners):
        produced = np.zeros(n, dtype=np.int64)
        for (learner, fold), scored in oof.scored.items():
            if learner != name:
                continue
            produced[scored] += 1
            trained = oof.trained_on[(learner, fold)]
            overlap = np.intersect1d(scored, trained)
            if overlap.size:
                problems.append(f"{name} fold {fold}: {overlap.size} scored samples were in training")
            if np.any(oof.fold_id[trained] == fold):
                problems.append(f"{name} fold {fold}: training set includes its own fold")
        if np.any(produced != 1):
            problems.append(f"{name}: {int(np.sum(produced != 1))} samples not scored exactly once")
        column = oof.values[:, col]
        if not np.all((column >= 0) & (column <= 1)):
            problems.append(f"{name}: entries outside [0, 1] or missing")
    return problems


def mean_prediction(oof: OofMatrix | np.ndarray) -> np.ndarray:
    values = oof.values if isinstance(oof, OofMatrix) else np.asarray(oof)
    return values.mean(axis=1)


def fit_full(specs: Sequence[LearnerSpec], X: np.ndarray, y: np.ndarray, seed: int,
             jobs: int = 1) -> list[Model]:
    """Refit every learner on the whole training split (test-side Phase I inputs)."""
    def run(spec):
        try:
            return train_base(spec, X, y, derive_seed(seed, spec.name, "full"))
        except Exception as exc:
            raise StageError(f"phase1:{spec.name}:full", exc) from exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run, specs))
    return [run(s) for s in specs]


def save_oof(oof: OofMatrix, path: str | Path) -> None:
    """``sample_id,fold,<learner columns...>,mean``; floats written with repr."""
    mean = mean_prediction(oof)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["sample_id", "fold", *oof.learners, "mean"]) + "\n")
        for s in range(oof.values.shape[0]):
            cells = [str(s), str(int(oof.fold_id[s]))]
            cells += [repr(float(v)) for v in oof.values[s]] + [repr(float(mean[s]))]
            fh.write(",".join(cells) + "\n")


def load_oof(path: str | Path) -> OofMatrix:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    learners = header[2:-1]
    values = np.array([[float(v) for v in r[2:-1]] for r in rows]).reshape(len(rows), len(learners))
    fold_id = np.array([int(r[1]) for r in rows], dtype=np.int64)
    return OofMatrix(values, learners, fold_id)


# --- persistence of fitted learners ----------------------------------------

_STATE_FIELDS = {
    "linear_svm": ("w", "b", "mu", "sd"),
    "logistic_regression": ("w", "b", "mu", "sd"),
    "smo": ("w", "b", "mu", "sd"),
    "gaussian_nb": ("log_prior", "means", "vars"),
    "knn": ("X", "y", "k"),
    "decision_tree": ("feature", "threshold", "left", "right", "value"),
}


def model_state(model: Model) -> dict[str, np.ndarray]:
    if model.name == "xgboost":
        from .boost import ensemble_to_arrays

        state = ensemble_to_arrays(model.ensemble)
    else:
        state = {f: np.asarray(getattr(model, f)) for f in _STATE_FIELDS[model.name]}
    state["n_features"] = np.asarray(model.n_features)
    return state


def model_from_state(name: str, state: Mapping[str, np.ndarray]) -> Model:
    kind = LearnerKind(name)
    model = _FACTORIES[kind]()
    if kind is LearnerKind.XGBOOST:
        from .boost import ensemble_from_arrays

        model.ensemble = ensemble_from_arrays(state)
    else:
        for f in _STATE_FIELDS[name]:
            value = np.asarray(state[f])
            setattr(model, f, value.item() if value.ndim == 0 else value)
    model.n_features = int(state["n_features"])
    return model
