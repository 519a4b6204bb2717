"""Binary (one-hot) encoding of user states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .schema import FeatureSchema, UserState, check_users


@dataclass(frozen=True)
class Bit:
    """Meaning of one encoded position."""

    feature: str
    index: int  # category index or bin index inside the feature block
    label: str  # "job = manager" / "10000 <= income < 20000"
    negated: str

    def describe(self, value: bool) -> str:
        return self.label if value else self.negated


def _bin_bounds(bins, k):
    lo = bins[k - 1] if k > 0 else None
    hi = bins[k] if k < len(bins) else None
    return lo, hi


def _fmt(x):
    x = float(x)
    return str(int(x)) if x.is_integer() else f"{x:g}"


class BinaryEncoder(TransformerMixin, BaseEstimator):
    """One-hot blocks for categorical features, one-hot bin index for numeric ones.

    Parameters
    ----------
    schema : FeatureSchema
        Feature layout. Values outside the outermost thresholds land in the
        boundary bins.
    """

    def __init__(self, schema: FeatureSchema):
        self.schema = schema
        self._layout()

    def _layout(self):
        offsets, bits = [], []
        pos = 0
        for f in self.schema.features:
            offsets.append(pos)
            if f.is_categorical:
                for k, v in enumerate(f.values):
                    bits.append(Bit(f.name, k, f"{f.name} = {v}", f"{f.name} != {v}"))
            else:
                for k in range(f.width):
                    lo, hi = _bin_bounds(f.bins, k)
                    if lo is None and hi is None:
                        text = f"{f.name} is any"
                    elif lo is None:
                        text = f"{f.name} < {_fmt(hi)}"
                    elif hi is None:
                        text = f"{f.name} >= {_fmt(lo)}"
                    else:
                        text = f"{_fmt(lo)} <= {f.name} < {_fmt(hi)}"
                    neg = (
                        f"{f.name} >= {_fmt(hi)}" if lo is None and hi is not None
                        else f"{f.name} < {_fmt(lo)}" if hi is None and lo is not None
                        else f"not ({text})"
                    )
                    bits.append(Bit(f.name, k, text, neg))
            pos += f.width
        self.offsets_ = np.asarray(offsets)
        self.bits_ = bits
        self.width_ = pos

    @property
    def width(self) -> int:
        return self.width_

    def fit(self, X=None, y=None):
        return self

    def block_index(self, state: UserState) -> list[int]:
        idx = []
        for f, v in zip(self.schema.features, state.values):
            idx.append(f.values.index(v) if f.is_categorical else f.bin_index(v))
        return idx

    def encode(self, state: UserState) -> np.ndarray:
        out = np.zeros(self.width_, dtype=np.float64)
        out[self.offsets_ + np.asarray(self.block_index(state))] = 1.0
        return out

    def transform(self, X) -> np.ndarray:
        if isinstance(X, UserState):
            return self.encode(X)
        users = check_users(X, self.schema)
        if not users:
            return np.zeros((0, self.width_))
        return np.stack([self.encode(u) for u in users])

    def feature_names_out(self) -> list[str]:
        return [b.label for b in self.bits_]

    get_feature_names_out = feature_names_out


def encode_binary(state: UserState, encoder: BinaryEncoder) -> np.ndarray:
    return encoder.encode(state)
