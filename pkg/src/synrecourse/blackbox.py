"""Black-box classifiers and query accounting."""

from __future__ import annotations

import json
import threading
import warnings
from collections import Counter
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.neural_network import MLPClassifier

from .data import Dataset
from .encoding import BinaryEncoder
from .schema import UserState

PHASES = ("train", "inference", "distill-train", "distill-predict", "eval")
MODEL_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class BlackBox(Protocol):
    def predict(self, state: UserState) -> bool: ...


class FormulaBlackBox:
    """Wraps a hand-written decision function (e.g. a task's label formula)."""

    def __init__(self, formula: Callable[[UserState], bool], name: str = "formula"):
        self.formula = formula
        self.name = name

    def predict(self, state: UserState) -> bool:
        return bool(self.formula(state))


class QueryCounter:
    """Counts every ``predict`` call, split by the active phase.

    All modules receive the counter rather than the raw model, so no query
    can bypass it. ``phase`` switches the tag for a block of code.
    """

    def __init__(self, model: BlackBox, phase: str = "train"):
        self.model = model
        self.counts: Counter = Counter({p: 0 for p in PHASES})
        self._phase = phase
        self._lock = threading.Lock()
        self._check(phase)

    @staticmethod
    def _check(phase):
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}; expected one of {PHASES}")

    @property
    def active_phase(self) -> str:
        return self._phase

    @contextmanager
    def phase(self, name: str):
        self._check(name)
        prev, self._phase = self._phase, name
        try:
            yield self
        finally:
            self._phase = prev

    def predict(self, state: UserState) -> bool:
        out = bool(self.model.predict(state))
        with self._lock:
            self.counts[self._phase] += 1
        return out

    __call__ = predict

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def snapshot(self) -> dict[str, int]:
        return {p: int(self.counts[p]) for p in PHASES}


class MLPBlackBox(ClassifierMixin, BaseEstimator):
    """Feed-forward ReLU network over the binary encoding, threshold 0.5.

    Fitting delegates to scikit-learn's SGD-trained ``MLPClassifier``; the
    forward pass used for predictions is plain numpy over the stored weights
    so a saved model reloads without pickles.
    """

    def __init__(
        self,
        encoder: BinaryEncoder | None = None,
        hidden_layer_sizes: Sequence[int] = (64, 64, 32, 16),
        epochs: int = 300,
        learning_rate: float = 0.05,
        batch_size: int = 32,
        seed: int = 0,
    ):
        self.encoder = encoder
        self.hidden_layer_sizes = hidden_layer_sizes
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y).astype(int)
        if X.shape[0] == 0:
            raise TrainingError("cannot train on an empty dataset")
        classes = np.unique(y)
        if classes.size == 1:
            # constant labels: a network with zero weights and a saturated bias
            self.coefs_ = [np.zeros((X.shape[1], 1))]
            self.intercepts_ = [np.array([30.0 if classes[0] == 1 else -30.0])]
            self.classes_ = np.array([0, 1])
            return self
        clf = MLPClassifier(
            hidden_layer_sizes=tuple(self.hidden_layer_sizes),
            activation="relu",
            solver="sgd",
            learning_rate_init=self.learning_rate,
            momentum=0.0,
            nesterovs_momentum=False,
            batch_size=min(self.batch_size, X.shape[0]),
            max_iter=self.epochs,
            random_state=self.seed,
            n_iter_no_change=self.epochs,
            tol=0.0,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            clf.fit(X, y)
        self.coefs_ = [np.asarray(c) for c in clf.coefs_]
        self.intercepts_ = [np.asarray(b) for b in clf.intercepts_]
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba_bits(self, X) -> np.ndarray:
        a = np.atleast_2d(np.asarray(X, dtype=float))
        for i, (W, b) in enumerate(zip(self.coefs_, self.intercepts_)):
            a = a @ W + b
            if i < len(self.coefs_) - 1:
                a = np.maximum(a, 0.0)
        return 1.0 / (1.0 + np.exp(-np.clip(a[:, 0], -500, 500)))

    def predict_bits(self, X) -> np.ndarray:
        return self.predict_proba_bits(X) >= 0.5

    def predict(self, state):
        if isinstance(state, UserState):
            return bool(self.predict_bits(self.encoder.encode(state))[0])
        return self.predict_bits(state)

    def save(self, path: str | Path):
        arrays = {f"W{i}": W for i, W in enumerate(self.coefs_)}
        arrays.update({f"b{i}": b for i, b in enumerate(self.intercepts_)})
        meta = {"version": MODEL_FORMAT_VERSION, "kind": "mlp", "layers": len(self.coefs_)}
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path: str | Path, encoder: BinaryEncoder) -> "MLPBlackBox":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("version") != MODEL_FORMAT_VERSION or meta.get("kind") != "mlp":
                raise ValueError(f"{path}: unsupported model file {meta}")
            model = cls(encoder)
            model.coefs_ = [z[f"W{i}"] for i in range(meta["layers"])]
            model.intercepts_ = [z[f"b{i}"] for i in range(meta["layers"])]
        model.classes_ = np.array([0, 1])
        return model


def train_mlp(
    dataset: Dataset,
    encoder: BinaryEncoder,
    hidden_layer_sizes: Sequence[int] = (64, 64, 32, 16),
    epochs: int = 300,
    learning_rate: float = 0.05,
    seed: int = 0,
) -> MLPBlackBox:
    """Fit a 5-layer (4 hidden + output) ReLU classifier on ``dataset``."""
    if len(dataset) == 0 or dataset.labels is None:
        raise TrainingError("train_mlp needs a non-empty labelled dataset")
    X = encoder.transform(dataset.rows)
    model = MLPBlackBox(encoder, hidden_layer_sizes, epochs, learning_rate, seed=seed)
    return model.fit(X, dataset.labels)


def accuracy(model: BlackBox, dataset: Dataset) -> float:
    if not len(dataset):
        return float("nan")
    hits = sum(model.predict(s) == y for s, y in zip(dataset.rows, dataset.labels))
    return hits / len(dataset)
