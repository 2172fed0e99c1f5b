"""Dense C×H×W tensor container used throughout the lab.

A Field is an immutable double-precision array in row-major (channel, row,
column) order. All arithmetic is elementwise, shape-checked, and returns a
new Field; every public operation guarantees finite values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def _validate(data: np.ndarray) -> np.ndarray:
    if data.ndim != 3:
        raise ShapeError(f"field data must be 3-dimensional (C,H,W), got ndim={data.ndim}")
    if min(data.shape) < 1:
        raise ShapeError(f"field dimensions must be >= 1, got {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError("field values must be finite (no NaN/Inf)")
    return data


@dataclass(frozen=True)
class Field:
    """Immutable (C, H, W) float64 tensor."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        _validate(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @classmethod
    def zeros(cls, shape: tuple) -> "Field":
        return cls(np.zeros(shape, dtype=np.float64))

    def _check(self, other: "Field") -> None:
        if self.shape != other.shape:
            raise ShapeError(f"shape mismatch: {self.shape} vs {other.shape}")

    def __add__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.data + other.data)

    def __sub__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.data - other.data)

    def __mul__(self, other):
        """Elementwise product with a Field, or scaling by a constant."""
        if isinstance(other, Field):
            self._check(other)
            return Field(self.data * other.data)
        return self.scale(float(other))

    __rmul__ = __mul__

    def scale(self, factor: float) -> "Field":
        return Field(self.data * factor)

    def allclose(self, other: "Field", atol: float = 0.0, rtol: float = 0.0) -> bool:
        return self.shape == other.shape and np.allclose(
            self.data, other.data, atol=atol, rtol=rtol
        )

    def max_abs_diff(self, other: "Field") -> float:
        self._check(other)
        return float(np.abs(self.data - other.data).max())
