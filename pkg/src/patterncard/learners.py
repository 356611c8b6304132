"""Kernels and the small regressors fit on one pattern's history.

Targets are ``log1p(cardinality)``.  Three predictor families are offered:
kernel-weighted ridge regression, the one-shot kernel average, and
least-squares gradient boosted regression trees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .featurize import FeatureExtractorSpec, featurize
from .querygraph import AttrKey, QueryDag, Schema


class DimMismatch(ValueError):
    pass


class SingularSystem(ArithmeticError):
    pass


class EmptyHistory(ValueError):
    pass


@dataclass(frozen=True)
class KernelParams:
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("kernel width must be positive")


@dataclass
class TrainingSet:
    X: np.ndarray
    y: np.ndarray
    raw: np.ndarray | None = None

    @classmethod
    def from_cardinalities(cls, X, cards) -> "TrainingSet":
        raw = np.asarray(cards, dtype=np.int64)
        return cls(np.atleast_2d(np.asarray(X, dtype=np.float64)), np.log1p(raw.astype(np.float64)), raw)

    def __len__(self):
        return int(self.y.shape[0])


# -- kernels ------------------------------------------------------------------


def gaussian_kernel(x, z, params: KernelParams) -> float:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise DimMismatch(f"{x.shape} vs {z.shape}")
    d = x - z
    return float(np.exp(-np.dot(d, d) / params.sigma ** 2))


def kernel_weights(X: np.ndarray, center: np.ndarray, sigma: float) -> np.ndarray:
    if X.shape[1] != center.shape[0]:
        raise DimMismatch(f"history dim {X.shape[1]} vs query dim {center.shape[0]}")
    d = X - center
    return np.exp(-np.einsum("ij,ij->i", d, d) / sigma ** 2)


def composite_kernel(g: QueryDag, g2: QueryDag, pattern_feats: Sequence[AttrKey],
                     learn_feats: Sequence[FeatureExtractorSpec], params: KernelParams,
                     schema: Schema | None = None) -> float:
    """Indicator of equal pattern hashes times the Gaussian kernel."""
    c1, x1 = featurize(g, pattern_feats, learn_feats, schema)
    c2, x2 = featurize(g2, pattern_feats, learn_feats, schema)
    if c1.pattern != c2.pattern:
        return 0.0
    return gaussian_kernel(x1.values, x2.values, params)


def default_sigma(X: np.ndarray, max_rows: int = 256) -> float:
    """Median pairwise distance (evenly subsampled), floored at 1e-6."""
    n = X.shape[0]
    if n < 2:
        return 1.0
    if n > max_rows:
        X = X[np.linspace(0, n - 1, max_rows).astype(int)]
    sq = np.einsum("ij,ij->i", X, X)
    d2 = sq[:, None] + sq[None, :] - 2 * X @ X.T
    iu = np.triu_indices(X.shape[0], k=1)
    med = float(np.sqrt(np.median(np.maximum(d2[iu], 0.0))))
    return max(med, 1e-6)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        const = std <= 1e-12
        return cls(np.where(const, 0.0, mean), np.where(const, 1.0, std))

    def __call__(self, X):
        return (X - self.mean) / self.scale


# -- locally weighted ridge ------------------------------------------------------


@dataclass
class RidgeModel:
    """``weights[0] + weights[1:] @ (x - offset)``; the intercept is not penalised."""

    weights: np.ndarray
    l2: float
    offset: np.ndarray

    def predict(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(self.weights[0] + self.weights[1:] @ (x - self.offset))

    def predict_many(self, X) -> np.ndarray:
        return self.weights[0] + (np.asarray(X) - self.offset) @ self.weights[1:]

    def to_dict(self) -> dict:
        return {"kind": "ridge", "weights": self.weights.tolist(), "l2": self.l2,
                "offset": self.offset.tolist()}

    @classmethod
    def from_dict(cls, d) -> "RidgeModel":
        return cls(np.asarray(d["weights"], float), float(d["l2"]), np.asarray(d["offset"], float))


def fit_weighted_ridge(X: np.ndarray, y: np.ndarray, w: np.ndarray, l2: float,
                       offset: np.ndarray) -> RidgeModel:
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("non-finite training data")
    if w.sum() <= 0.0:
        raise SingularSystem("all kernel weights are zero")
    D = np.hstack([np.ones((X.shape[0], 1)), X - offset])
    Dw = D * w[:, None]
    A = D.T @ Dw
    A[1:, 1:] += l2 * np.eye(X.shape[1])
    b = Dw.T @ y
    try:
        theta = np.linalg.solve(A, b)
        if not np.all(np.isfinite(theta)) or np.linalg.cond(A) > 1e12:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        theta = np.linalg.lstsq(A, b, rcond=None)[0]
    if not np.all(np.isfinite(theta)):
        raise SingularSystem("normal equations have no finite solution")
    return RidgeModel(theta, float(l2), np.asarray(offset, dtype=np.float64).copy())


def fit_lwlr(history: TrainingSet, center, params: KernelParams, l2: float = 1e-3) -> RidgeModel:
    """Ridge regression weighted by the Gaussian kernel around ``center``.

    Features are centred at ``center`` so the prediction there is the
    intercept; a rank-deficient system falls back to the minimum-norm
    solution of the normal equations.
    """
    if len(history) == 0:
        raise EmptyHistory("no rows to fit")
    center = np.asarray(center, dtype=np.float64)
    w = kernel_weights(history.X, center, params.sigma)
    return fit_weighted_ridge(history.X, history.y, w, l2, center)


def predict_rbf_oneshot(history: TrainingSet, center, params: KernelParams) -> float:
    if len(history) == 0:
        raise EmptyHistory("no rows to average")
    k = kernel_weights(history.X, np.asarray(center, dtype=np.float64), params.sigma)
    z = k.sum()
    if z <= 0.0:
        return float(history.y.mean())
    return float(k @ history.y / z)


# -- gradient boosted trees ------------------------------------------------------------


@dataclass(frozen=True)
class GbdtParams:
    n_rounds: int = 50
    max_depth: int = 3
    learning_rate: float = 0.3
    min_samples_leaf: int = 2

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")


@dataclass
class RegressionTree:
    """Flat arrays; ``feature[k] == -1`` marks a leaf.  ``x <= threshold`` goes left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def depth(self) -> int:
        def rec(k):
            if self.feature[k] < 0:
                return 0
            return 1 + max(rec(self.left[k]), rec(self.right[k]))
        return rec(0)

    def predict_one(self, x) -> float:
        k = 0
        while self.feature[k] >= 0:
            k = self.left[k] if x[self.feature[k]] <= self.threshold[k] else self.right[k]
        return float(self.value[k])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.predict_one(x) for x in np.atleast_2d(X)])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d) -> "RegressionTree":
        return cls(np.asarray(d["feature"], np.int64), np.asarray(d["threshold"], float),
                   np.asarray(d["left"], np.int64), np.asarray(d["right"], np.int64),
                   np.asarray(d["value"], float))


class GbdtModel:
    """Base score plus learning-rate-scaled sum of regression trees.

    Trees are held as stacked ``(n_trees, max_nodes)`` arrays, padded with
    leaves, so prediction runs in one compiled loop.
    """

    _FIELDS = ("feature", "threshold", "left", "right", "value")

    def __init__(self, stack: tuple[np.ndarray, ...], learning_rate: float, base_score: float,
                 n_features: int = 0):
        self._stack = stack
        self.learning_rate = learning_rate
        self.base_score = base_score
        self.n_features = n_features

    @classmethod
    def from_trees(cls, trees: Sequence[RegressionTree], learning_rate: float, base_score: float,
                   n_features: int = 0) -> "GbdtModel":
        width = max((len(t.feature) for t in trees), default=1)
        stack = _empty_stack(len(trees), width)
        for i, t in enumerate(trees):
            for a, k in zip(stack, cls._FIELDS):
                a[i, : len(t.feature)] = getattr(t, k)
        return cls(stack, learning_rate, base_score, n_features)

    @property
    def trees(self) -> list[RegressionTree]:
        out = []
        for i in range(self._stack[0].shape[0]):
            n = _used_nodes(self._stack[0][i], self._stack[1][i], self._stack[2][i])
            out.append(RegressionTree(*(a[i, :n].copy() for a in self._stack)))
        return out

    def predict(self, x) -> float:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.n_features,):
            raise DimMismatch(f"model dim {self.n_features} vs input {x.shape}")
        return self.base_score + self.learning_rate * _forest_sum(*self._stack, x)

    def predict_many(self, X) -> np.ndarray:
        return np.array([self.predict(x) for x in np.atleast_2d(np.asarray(X, dtype=np.float64))])

    def to_dict(self) -> dict:
        return {"kind": "gbdt", "learning_rate": self.learning_rate, "base_score": self.base_score,
                "n_features": self.n_features, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d) -> "GbdtModel":
        return cls.from_trees([RegressionTree.from_dict(t) for t in d["trees"]],
                              float(d["learning_rate"]), float(d["base_score"]), int(d["n_features"]))


def _empty_stack(n_trees: int, width: int) -> tuple[np.ndarray, ...]:
    return (np.full((n_trees, width), -1, np.int64), np.zeros((n_trees, width)),
            np.full((n_trees, width), -1, np.int64), np.full((n_trees, width), -1, np.int64),
            np.zeros((n_trees, width)))


def _used_nodes(feature, threshold, left) -> int:
    """Nodes actually allocated in a padded row (children ids are dense)."""
    internal = feature >= 0
    return int(max(left[internal].max() + 2, 1)) if internal.any() else 1


@njit(cache=True)
def _forest_sum(feature, threshold, left, right, value, x):  # pragma: no cover - compiled
    total = 0.0
    for t in range(feature.shape[0]):
        k = 0
        while feature[t, k] >= 0:
            if x[feature[t, k]] <= threshold[t, k]:
                k = left[t, k]
            else:
                k = right[t, k]
        total += value[t, k]
    return total


@njit(cache=True)
def _grow_tree(X, order, w, r, max_depth, min_leaf):  # pragma: no cover - compiled
    """Level-wise exact greedy tree on residuals ``r``.

    Each level makes one pass per feature over the presorted rows, keeping
    running left-side sums per open node.  A split is taken only if it
    strictly lowers the weighted squared error.  Among equal gains the
    lowest feature index, then the lowest threshold, wins.
    """
    n, d = X.shape
    cap = 2 ** (max_depth + 1) - 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    node_of = np.zeros(n, np.int64)
    leaf_of = np.zeros(n, np.int64)
    n_nodes = 1
    lo, hi = 0, 1
    for depth in range(max_depth + 1):
        m = hi - lo
        tw = np.zeros(m)
        trw = np.zeros(m)
        tc = np.zeros(m, np.int64)
        for i in range(n):
            k = node_of[i] - lo
            if k >= 0 and k < m:
                tw[k] += w[i]
                trw[k] += w[i] * r[i]
                tc[k] += 1
        for k in range(m):
            value[lo + k] = trw[k] / tw[k] if tw[k] > 0 else 0.0
        if depth == max_depth:
            break
        best_gain = np.full(m, -np.inf)
        best_f = np.full(m, -1, np.int64)
        best_thr = np.zeros(m)
        cw = np.zeros(m)
        crw = np.zeros(m)
        cc = np.zeros(m, np.int64)
        lastx = np.zeros(m)
        for f in range(d):
            cw[:] = 0.0
            crw[:] = 0.0
            cc[:] = 0
            for p in range(n):
                i = order[p, f]
                k = node_of[i] - lo
                if k < 0 or k >= m:
                    continue
                x = X[i, f]
                if cc[k] >= min_leaf and tc[k] - cc[k] >= min_leaf and x > lastx[k]:
                    lw = cw[k]
                    rw = tw[k] - lw
                    if lw > 0 and rw > 0:
                        lrw = crw[k]
                        rrw = trw[k] - lrw
                        g = lrw * lrw / lw + rrw * rrw / rw - trw[k] * trw[k] / tw[k]
                        if g > best_gain[k]:
                            best_gain[k] = g
                            best_f[k] = f
                            thr = lastx[k] + (x - lastx[k]) / 2.0
                            if not (lastx[k] <= thr and thr < x):
                                thr = lastx[k]
                            best_thr[k] = thr
                cw[k] += w[i]
                crw[k] += w[i] * r[i]
                cc[k] += 1
                lastx[k] = x
        start = n_nodes
        for k in range(m):
            if best_f[k] >= 0 and best_gain[k] > 1e-12 * max(1.0, tw[k]):
                node = lo + k
                feature[node] = best_f[k]
                threshold[node] = best_thr[k]
                left[node] = n_nodes
                right[node] = n_nodes + 1
                n_nodes += 2
        for i in range(n):
            node = node_of[i]
            if node < lo or node >= hi:
                continue
            if feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node_of[i] = left[node]
                else:
                    node_of[i] = right[node]
            else:
                leaf_of[i] = node
                node_of[i] = -1
        if n_nodes == start:
            break
        lo, hi = start, n_nodes
    fitted = np.zeros(n)
    for i in range(n):
        if node_of[i] >= 0:
            leaf_of[i] = node_of[i]
        fitted[i] = value[leaf_of[i]]
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], fitted)


def fit_gbdt(history: TrainingSet, params: GbdtParams = GbdtParams(),
             sample_weight: np.ndarray | None = None) -> GbdtModel:
    """Least-squares boosting of depth-limited regression trees.

    The base score is the (weighted) mean target; each round fits a tree to
    the current residuals by greedy variance reduction and adds it scaled
    by the learning rate.  Features are sorted once per fit.
    """
    n = len(history)
    if n == 0:
        raise EmptyHistory("no rows to fit")
    X = np.ascontiguousarray(history.X, dtype=np.float64)
    y = np.asarray(history.y, dtype=np.float64)
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    if w.sum() <= 0:
        raise SingularSystem("all sample weights are zero")
    base = float(w @ y / w.sum())
    if n < 2:
        return GbdtModel.from_trees([], params.learning_rate, base, X.shape[1])
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable"))
    min_leaf = max(int(params.min_samples_leaf), 1)
    stack = _empty_stack(params.n_rounds, 2 ** (params.max_depth + 1) - 1)
    pred = np.full(n, base)
    used = 0
    for _ in range(params.n_rounds):
        grown = _grow_tree(X, order, w, y - pred, params.max_depth, min_leaf)
        f, val, fitted = grown[0], grown[4], grown[5]
        if f[0] < 0 and abs(val[0]) < 1e-15:
            break
        for a, g in zip(stack, grown[:5]):
            a[used, : len(f)] = g
        used += 1
        pred = pred + params.learning_rate * fitted
    return GbdtModel(tuple(a[:used] for a in stack), params.learning_rate, base, X.shape[1])


def predict_gbdt(model: GbdtModel, x) -> float:
    return model.predict(x)


# -- output ---------------------------------------------------------------------------

_HARD_CAP = 2 ** 62


def to_cardinality(pred: float, max_card: int | None = None) -> int:
    """``round(exp(pred) - 1)`` clamped into ``[0, max_card]``."""
    cap = _HARD_CAP if max_card is None else min(int(max_card), _HARD_CAP)
    if not math.isfinite(pred):
        raise ValueError("prediction is not finite")
    if pred > math.log(cap + 1.0):
        return cap
    return int(min(max(round(math.expm1(pred)), 0), cap))


def model_from_dict(d):
    if d is None:
        return None
    return {"ridge": RidgeModel, "gbdt": GbdtModel}[d["kind"]].from_dict(d)
