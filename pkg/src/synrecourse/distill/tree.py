"""Greedy CART over binary features (Gini impurity)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Hashable

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin


@dataclass
class TreeNode:
    label: Any
    n: int
    bit: int | None = None  # None for leaves
    zero: "TreeNode | None" = None
    one: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.bit is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.zero.depth(), self.one.depth())

    def to_dict(self, encode_label) -> dict:
        if self.is_leaf:
            return {"label": encode_label(self.label), "n": self.n}
        return {
            "label": encode_label(self.label),
            "n": self.n,
            "bit": self.bit,
            "zero": self.zero.to_dict(encode_label),
            "one": self.one.to_dict(encode_label),
        }

    @classmethod
    def from_dict(cls, d: dict, decode_label) -> "TreeNode":
        node = cls(decode_label(d["label"]), int(d["n"]))
        if "bit" in d:
            node.bit = int(d["bit"])
            node.zero = cls.from_dict(d["zero"], decode_label)
            node.one = cls.from_dict(d["one"], decode_label)
        return node


def gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


class BitDecisionTree(ClassifierMixin, BaseEstimator):
    """Binary-split decision tree for 0/1 feature vectors.

    Splits minimise weighted Gini impurity; equal impurities go to the lowest
    bit index. A leaf predicts its majority label, ties resolved by the
    smallest ``str(label)``. Splitting stops at ``max_depth``, on pure nodes,
    and when no split lowers impurity.
    """

    def __init__(self, max_depth: int = 6, min_samples_leaf: int = 1):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf

    def fit(self, X, y):
        X = np.asarray(X)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        if X.shape[0] == 0:
            raise ValueError("cannot fit a tree on zero samples")
        if len(y) != X.shape[0]:
            raise ValueError("X and y differ in length")
        X = X > 0.5
        labels = sorted(set(y), key=str)
        self.classes_ = labels
        index = {lab: i for i, lab in enumerate(labels)}
        yi = np.asarray([index[v] for v in y])
        self.n_features_in_ = X.shape[1]
        self.root_ = self._grow(X, yi, 0)
        return self

    def _leaf_label(self, counts: np.ndarray):
        # classes_ is sorted by str, so argmax's first-index rule is the tie-break
        return self.classes_[int(np.argmax(counts))]

    def _grow(self, X, y, depth) -> TreeNode:
        k = len(self.classes_)
        counts = np.bincount(y, minlength=k)
        node = TreeNode(self._leaf_label(counts), int(y.size))
        if depth >= self.max_depth or np.count_nonzero(counts) <= 1:
            return node
        n = y.size
        parent = gini(counts)
        # class counts among rows where each bit is 1
        onehot = np.zeros((n, k))
        onehot[np.arange(n), y] = 1.0
        ones = X.T.astype(float) @ onehot  # (bits, classes)
        zeros = counts[None, :] - ones
        n1 = ones.sum(axis=1)
        n0 = n - n1
        with np.errstate(invalid="ignore", divide="ignore"):
            g1 = 1.0 - np.sum((ones / n1[:, None]) ** 2, axis=1)
            g0 = 1.0 - np.sum((zeros / n0[:, None]) ** 2, axis=1)
        impurity = (np.nan_to_num(g1) * n1 + np.nan_to_num(g0) * n0) / n
        ok = (n1 >= self.min_samples_leaf) & (n0 >= self.min_samples_leaf)
        impurity = np.where(ok, impurity, np.inf)
        bit = int(np.argmin(impurity))
        if not np.isfinite(impurity[bit]) or impurity[bit] >= parent - 1e-12:
            return node
        node.bit = bit
        mask = X[:, bit]
        node.zero = self._grow(X[~mask], y[~mask], depth + 1)
        node.one = self._grow(X[mask], y[mask], depth + 1)
        return node

    def decision_path(self, x) -> tuple[Any, list[tuple[int, bool]]]:
        """Predicted label and the (bit, value) tests along the way."""
        x = np.asarray(x) > 0.5
        node = self.root_
        path = []
        while not node.is_leaf:
            v = bool(x[node.bit])
            path.append((node.bit, v))
            node = node.one if v else node.zero
        return node.label, path

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X))
        return [self.decision_path(x)[0] for x in X]

    def get_depth(self) -> int:
        return self.root_.depth()
