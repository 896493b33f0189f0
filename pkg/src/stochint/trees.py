"""Deterministic regression trees and least-squares gradient boosting.

Split search is exact greedy: every midpoint between consecutive distinct
sorted feature values is a candidate, and ties are broken toward the lowest
feature index, then the lowest threshold.  No subsampling anywhere, so
refitting on identical data reproduces the tree structure bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# relative gain below which a node is kept as a leaf; guards against
# splitting on pure floating-point noise (e.g. constant targets)
_GAIN_EPS = 1e-12


@dataclass
class RegressionTree:
    """Array-encoded binary tree; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        node = np.zeros(x.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return self.value[node]
            rows = np.flatnonzero(internal)
            go_left = x[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RegressionTree":
        return cls(
            feature=np.asarray(payload["feature"], dtype=np.int64),
            threshold=np.asarray(payload["threshold"], dtype=float),
            left=np.asarray(payload["left"], dtype=np.int64),
            right=np.asarray(payload["right"], dtype=np.int64),
            value=np.asarray(payload["value"], dtype=float),
        )


def _best_split(x: np.ndarray, y: np.ndarray, order: np.ndarray):
    """Best (feature, threshold) by squared-error reduction, or None.

    order holds, per feature, the node's row indices sorted by that feature.
    """
    d, m = order.shape
    if m < 2:
        return None
    xs = x[order, np.arange(d)[:, None]]
    ys = y[order]
    csum = np.cumsum(ys, axis=1)
    total = csum[:, -1]
    n_left = np.arange(1, m, dtype=float)
    s_left = csum[:, :-1]
    parent = (total * total) / m
    gain = (s_left * s_left) / n_left + (total[:, None] - s_left) ** 2 / (m - n_left)
    gain -= parent[:, None]
    gain[xs[:, 1:] <= xs[:, :-1]] = -np.inf

    flat = int(np.argmax(gain))
    j, pos = divmod(flat, m - 1)
    best = gain[j, pos]
    mean_square = float(np.dot(ys[0], ys[0])) / m
    if not np.isfinite(best) or best <= _GAIN_EPS * max(1.0, mean_square):
        return None
    a, b = xs[j, pos], xs[j, pos + 1]
    thr = 0.5 * (a + b)
    if thr >= b:
        thr = a
    return int(j), float(thr), best


def fit_tree(x: np.ndarray, y: np.ndarray, max_depth: int,
             presorted: np.ndarray | None = None) -> RegressionTree:
    """Grow a depth-limited least-squares tree with deterministic splits.

    presorted may carry argsort(x, axis=0).T to avoid re-sorting when many
    trees are grown on the same covariates.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = x.shape
    order0 = presorted if presorted is not None \
        else np.argsort(x, axis=0, kind="stable").T

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node(rows_sorted: np.ndarray) -> int:
        node_id = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(np.mean(y[rows_sorted[0]])))
        return node_id

    root = new_node(order0)
    stack = [(root, order0, 0)]
    while stack:
        node_id, order, depth = stack.pop()
        if depth >= max_depth:
            continue
        found = _best_split(x, y, order)
        if found is None:
            continue
        j, thr, _ = found
        go_left = x[:, j] <= thr
        mask = go_left[order]
        n_left = int(mask[0].sum())
        if n_left == 0 or n_left == order.shape[1]:
            continue
        order_left = order[mask].reshape(d, n_left)
        order_right = order[~mask].reshape(d, order.shape[1] - n_left)
        feature[node_id] = j
        threshold[node_id] = thr
        left_id = new_node(order_left)
        right_id = new_node(order_right)
        left[node_id] = left_id
        right[node_id] = right_id
        stack.append((right_id, order_right, depth + 1))
        stack.append((left_id, order_left, depth + 1))

    return RegressionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
    )


@dataclass
class GradientBoostedRegressor:
    """Squared-error gradient boosting on deterministic regression trees.

    Fit state: ``base_`` (mean of the training target), ``trees_``, and
    ``train_rmse_`` with one entry per completed round.
    """

    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    base_: float = 0.0
    trees_: list[RegressionTree] = field(default_factory=list)
    train_rmse_: np.ndarray | None = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "GradientBoostedRegressor":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError("x must be (n, d) and y must be (n,)")
        if self.n_trees < 1 or self.max_depth < 1:
            raise ValueError("n_trees and max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        self.base_ = float(np.mean(y))
        self.trees_ = []
        current = np.full(x.shape[0], self.base_)
        rmse = np.empty(self.n_trees)
        presorted = np.argsort(x, axis=0, kind="stable").T
        for round_idx in range(self.n_trees):
            residual = y - current
            tree = fit_tree(x, residual, self.max_depth, presorted=presorted)
            current = current + self.learning_rate * tree.predict(x)
            self.trees_.append(tree)
            rmse[round_idx] = float(np.sqrt(np.mean((y - current) ** 2)))
        self.train_rmse_ = rmse
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[0], self.base_)
        for tree in self.trees_:
            out += self.learning_rate * tree.predict(x)
        return out

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "base": self.base_,
            "trees": [tree.to_dict() for tree in self.trees_],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GradientBoostedRegressor":
        model = cls(
            n_trees=int(payload["n_trees"]),
            max_depth=int(payload["max_depth"]),
            learning_rate=float(payload["learning_rate"]),
        )
        model.base_ = float(payload["base"])
        model.trees_ = [RegressionTree.from_dict(t) for t in payload["trees"]]
        return model
