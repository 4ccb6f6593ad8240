"""Flat parameter vectors and the algebra used by merging and tuning.

A :class:`ParamVector` is a read-only float64 array plus a layout: an ordered
tuple of ``(name, shape)`` segments. Binary operations require identical
layouts, not just equal lengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import CompatibilityError, DomainError

Layout = tuple[tuple[str, tuple[int, ...]], ...]


def _normalize_layout(layout: Iterable) -> Layout:
    out = []
    for name, shape in layout:
        shape = tuple(int(s) for s in shape)
        if any(s < 0 for s in shape):
            raise DomainError(f"negative dimension in segment {name!r}: {shape}")
        out.append((str(name), shape))
    return tuple(out)


def layout_size(layout: Layout) -> int:
    return sum(math.prod(shape) for _, shape in layout)


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        layout = _normalize_layout(self.layout)
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if values.size != layout_size(layout):
            raise CompatibilityError(
                f"layout describes {layout_size(layout)} elements, got {values.size} values"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError("parameter vector contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", layout)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ParamVector":
        """Flatten named arrays (in mapping order) into a single vector."""
        layout = tuple((name, np.shape(a)) for name, a in arrays.items())
        if not arrays:
            return cls(np.zeros(0), layout)
        flat = np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays.values()])
        return cls(flat, layout)

    @classmethod
    def zeros(cls, layout: Layout) -> "ParamVector":
        layout = _normalize_layout(layout)
        return cls(np.zeros(layout_size(layout)), layout)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.layout, self.values.tobytes()))

    def __repr__(self) -> str:
        names = ", ".join(f"{n}{list(s)}" for n, s in self.layout)
        return f"ParamVector(n={len(self)}, layout=[{names}])"

    def segment_slices(self) -> list[tuple[str, slice, tuple[int, ...]]]:
        out, start = [], 0
        for name, shape in self.layout:
            stop = start + math.prod(shape)
            out.append((name, slice(start, stop), shape))
            start = stop
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        """Read-only views of each segment reshaped to its declared shape."""
        return {name: self.values[sl].reshape(shape) for name, sl, shape in self.segment_slices()}

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)


def check_compatible(a: ParamVector, b: ParamVector) -> None:
    if a.layout != b.layout:
        raise CompatibilityError(f"layout mismatch: {a.layout} vs {b.layout}")


def interpolate(w1: ParamVector, w2: ParamVector, alpha: float) -> ParamVector:
    """Return ``(1 - alpha) * w1 + alpha * w2``.

    Written in this form (rather than ``w1 + alpha * (w2 - w1)``) so both
    endpoints are reproduced bit for bit.
    """
    check_compatible(w1, w2)
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return w1.with_values(w1.values)
    if alpha == 1.0:
        return w2.with_values(w2.values)
    return w1.with_values((1.0 - alpha) * w1.values + alpha * w2.values)


def sub(w1: ParamVector, w2: ParamVector) -> ParamVector:
    check_compatible(w1, w2)
    return w1.with_values(w1.values - w2.values)


def add(w1: ParamVector, w2: ParamVector) -> ParamVector:
    check_compatible(w1, w2)
    return w1.with_values(w1.values + w2.values)


def axpy(y: ParamVector, a: float, x: ParamVector) -> ParamVector:
    """Return ``y + a * x``."""
    check_compatible(y, x)
    return y.with_values(y.values + float(a) * x.values)


def scale(w: ParamVector, c: float) -> ParamVector:
    return w.with_values(float(c) * w.values)


def l2_norm_sq(w: ParamVector) -> float:
    v = w.values
    return float(np.dot(v, v))
