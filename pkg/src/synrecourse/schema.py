"""Feature schema and user states."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class SchemaError(ValueError):
    """Raised when a schema, state or library is malformed."""


@dataclass(frozen=True)
class Feature:
    """One attribute of a user.

    Categorical features list their values in ordinal order (lowest first);
    the order is what comparisons such as ``education >= bachelor`` use.
    Numeric features carry interior bin thresholds and a closed value range.
    """

    name: str
    kind: str  # "categorical" | "numeric"
    values: tuple = ()
    bins: tuple = ()
    low: float = -math.inf
    high: float = math.inf

    def __post_init__(self):
        if self.kind == "categorical":
            if not self.values:
                raise SchemaError(f"categorical feature {self.name!r} has no values")
            if len(set(self.values)) != len(self.values):
                raise SchemaError(f"duplicate values in feature {self.name!r}")
        elif self.kind == "numeric":
            b = np.asarray(self.bins, dtype=float)
            if b.size and np.any(np.diff(b) <= 0):
                raise SchemaError(f"bins of {self.name!r} must be strictly increasing")
            if self.low > self.high:
                raise SchemaError(f"empty range for {self.name!r}")
        else:
            raise SchemaError(f"unknown feature kind {self.kind!r}")

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"

    @property
    def width(self) -> int:
        return len(self.values) if self.is_categorical else len(self.bins) + 1

    def level(self, value) -> float:
        """Ordinal position of a categorical value, or the number itself."""
        if self.is_categorical:
            try:
                return self.values.index(value)
            except ValueError:
                raise SchemaError(f"{value!r} is not a value of {self.name!r}") from None
        return float(value)

    def bin_index(self, value: float) -> int:
        # values beyond the outermost thresholds fall in the boundary bins
        return int(np.searchsorted(self.bins, value, side="right"))

    def parse(self, raw: Any):
        if self.is_categorical:
            if raw in self.values:
                return raw
            text = str(raw).strip()
            for v in self.values:
                if str(v) == text:
                    return v
            raise SchemaError(f"{raw!r} is not a value of {self.name!r}")
        try:
            value = float(raw)
        except (TypeError, ValueError):
            raise SchemaError(f"cannot parse {raw!r} as a number for {self.name!r}") from None
        if not math.isfinite(value):
            raise SchemaError(f"non-finite value for {self.name!r}")
        return value


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]
    protected: frozenset = frozenset()
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        unknown = set(self.protected) - set(names)
        if unknown:
            raise SchemaError(f"protected features not in schema: {sorted(unknown)}")
        object.__setattr__(self, "index", {n: i for i, n in enumerate(names)})

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def __len__(self):
        return len(self.features)

    def __getitem__(self, name: str) -> Feature:
        try:
            return self.features[self.index[name]]
        except KeyError:
            raise SchemaError(f"unknown feature {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self.index

    def state(self, values: Mapping[str, Any] | Sequence[Any]) -> "UserState":
        """Build a validated state from a mapping or a positional sequence."""
        if isinstance(values, UserState):
            values = values.values
        if isinstance(values, Mapping):
            missing = [n for n in self.names if n not in values]
            if missing:
                raise SchemaError(f"missing features: {missing}")
            extra = [k for k in values if k not in self.index]
            if extra:
                raise SchemaError(f"unknown features: {extra}")
            raw = [values[n] for n in self.names]
        else:
            raw = list(values)
            if len(raw) != len(self.features):
                raise SchemaError(
                    f"expected {len(self.features)} values, got {len(raw)}"
                )
        return UserState(tuple(f.parse(v) for f, v in zip(self.features, raw)), self)


@dataclass(frozen=True)
class UserState:
    """Immutable feature vector ordered as in its schema.

    Equality and hashing only look at the values, so states can key dicts
    and caches regardless of which schema object produced them.
    """

    values: tuple
    schema: FeatureSchema = field(compare=False, repr=False)

    def __getitem__(self, name: str):
        return self.values[self.schema.index[name]]

    def replace(self, name: str, value) -> "UserState":
        i = self.schema.index[name]
        vals = self.values[:i] + (value,) + self.values[i + 1:]
        return UserState(vals, self.schema)

    def as_dict(self) -> dict:
        return dict(zip(self.schema.names, self.values))

    def level(self, name: str) -> float:
        return self.schema[name].level(self[name])


def check_users(X, schema: FeatureSchema) -> list[UserState]:
    """Coerce users given as states, mappings, rows or a DataFrame."""
    if hasattr(X, "to_dict") and hasattr(X, "columns"):
        X = X.to_dict(orient="records")
    if isinstance(X, (UserState, Mapping)):
        X = [X]
    return [schema.state(x) for x in _iter(X)]


def _iter(X) -> Iterable:
    if X is None:
        raise SchemaError("no users given")
    return X
