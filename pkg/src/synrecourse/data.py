"""Datasets: ancestral sampling from a task's causal graph, CSV I/O, splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .schema import FeatureSchema, SchemaError, UserState
from .task import ConfigError, RecourseTask, sample_node

LABEL_COLUMN = "label"


class DataLoadError(ValueError):
    pass


@dataclass
class Dataset:
    schema: FeatureSchema
    rows: list[UserState] = field(default_factory=list)
    labels: list[bool] | None = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.rows):
            raise ValueError("labels and rows differ in length")

    def __len__(self):
        return len(self.rows)

    def subset(self, idx: Sequence[int]) -> "Dataset":
        rows = [self.rows[i] for i in idx]
        labels = None if self.labels is None else [self.labels[i] for i in idx]
        return Dataset(self.schema, rows, labels)

    def unfavourable(self) -> list[UserState]:
        if self.labels is None:
            raise ValueError("dataset has no labels")
        return [r for r, y in zip(self.rows, self.labels) if not y]


def sample_synthetic(
    task: RecourseTask,
    n: int,
    seed: int = 0,
    balanced: bool = False,
    label: Callable[[UserState], bool] | None = None,
) -> Dataset:
    """Draw ``n`` users feature by feature in topological order.

    With ``balanced=True`` users are rejection-sampled until each class holds
    half of the rows (the extra row of an odd ``n`` goes to the favourable
    class). Labels come from ``label`` or the task's own formula.
    """
    label = label or task.label
    if n < 0:
        raise ValueError("n must be non-negative")
    missing = [f for f in task.schema.names if f not in task.generative]
    if missing:
        raise ConfigError(f"no generative model for {missing}")
    if balanced and label is None:
        raise ConfigError("balanced sampling needs a label function")
    rng = np.random.default_rng(seed)
    order = [f for f in task.graph.order if f in task.schema] + [
        f for f in task.schema.names if f not in task.graph.nodes
    ]

    def draw() -> UserState:
        vals: dict = {}
        for name in order:
            model = task.generative[name]
            shift = 0.0
            for p, w in model.parents.items():
                feat = task.schema[p]
                if feat.is_categorical:
                    z = feat.level(vals[p]) / max(1, len(feat.values) - 1)
                else:
                    z = (vals[p] - feat.low) / (feat.high - feat.low)
                shift += w * z
            vals[name] = sample_node(model, task.schema[name], shift, rng)
        return task.schema.state(vals)

    rows: list[UserState] = []
    labels: list[bool] = []
    if not balanced:
        for _ in range(n):
            s = draw()
            rows.append(s)
            if label is not None:
                labels.append(bool(label(s)))
        return Dataset(task.schema, rows, labels if label is not None else None)

    want = {True: n - n // 2, False: n // 2}
    have = {True: 0, False: 0}
    tries = 0
    while len(rows) < n:
        s = draw()
        y = bool(label(s))
        tries += 1
        if have[y] < want[y]:
            rows.append(s)
            labels.append(y)
            have[y] += 1
        if tries > 1000 * max(n, 1):
            raise ConfigError("label function is too unbalanced to fill both classes")
    return Dataset(task.schema, rows, labels)


def save_dataset(ds: Dataset, path: str | Path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        header = ds.schema.names + ([LABEL_COLUMN] if ds.labels is not None else [])
        w.writerow(header)
        for i, r in enumerate(ds.rows):
            vals = [_fmt(v) for v in r.values]
            if ds.labels is not None:
                vals.append(int(ds.labels[i]))
            w.writerow(vals)


def _fmt(v):
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def load_dataset(path: str | Path, schema: FeatureSchema) -> Dataset:
    """Read a CSV whose header names schema features (plus optional ``label``)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataLoadError(f"{path}: missing header") from None
        unknown = [h for h in header if h not in schema and h != LABEL_COLUMN]
        if unknown:
            raise DataLoadError(f"{path}: unknown columns {unknown}")
        absent = [n for n in schema.names if n not in header]
        if absent:
            raise DataLoadError(f"{path}: missing columns {absent}")
        has_label = LABEL_COLUMN in header
        rows, labels = [], []
        for i, rec in enumerate(reader):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataLoadError(f"{path}: row {i}: expected {len(header)} fields")
            mapping = dict(zip(header, rec))
            try:
                y = mapping.pop(LABEL_COLUMN, None)
                rows.append(schema.state(mapping))
                if has_label:
                    labels.append(_parse_bool(y))
            except (SchemaError, ValueError) as exc:
                raise DataLoadError(f"{path}: row {i}: {exc}") from None
    return Dataset(schema, rows, labels if has_label else None)


def _parse_bool(v) -> bool:
    t = str(v).strip().lower()
    if t in ("1", "true", "yes", "good"):
        return True
    if t in ("0", "false", "no", "bad"):
        return False
    raise ValueError(f"cannot parse label {v!r}")


def train_test_split(ds: Dataset, test_size: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Shuffled split; the train part holds ``round(0.8 * n)`` rows by default."""
    n = len(ds)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round((1.0 - test_size) * n))
    return ds.subset(perm[:n_train].tolist()), ds.subset(perm[n_train:].tolist())
