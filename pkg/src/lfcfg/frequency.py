"""Linear frequency decoupling via a down/up-sampling operator.

The low-frequency part of a field is produced by box-average pooling at a
scale factor followed by upsampling back to the original resolution; the
high-frequency part is always the residual, so reconstruction is exact by
construction. Both stages are linear, which the down-weighting statistics
rely on.

Edge behaviour: when H or W is not divisible by the scale, the trailing
window averages over the cells that exist; the upsampler clamps sample
coordinates at the borders (align-corners-false convention).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError
from .field import Field

VALID_SCALES = (1, 2, 4, 8)
UPSAMPLE_KERNELS = ("bilinear", "nearest")


@dataclass(frozen=True)
class FreqSplit:
    low: Field
    high: Field
    scale: int


def _check_scale(scale: int, upsample: str) -> None:
    if scale not in VALID_SCALES:
        raise ConfigError(f"filter scale must be one of {VALID_SCALES}, got {scale}")
    if upsample not in UPSAMPLE_KERNELS:
        raise ConfigError(f"upsample kernel must be one of {UPSAMPLE_KERNELS}, got {upsample!r}")


def _box_downsample(data: np.ndarray, scale: int) -> np.ndarray:
    _, height, width = data.shape
    starts_h = np.arange(0, height, scale)
    starts_w = np.arange(0, width, scale)
    counts_h = np.diff(np.append(starts_h, height))
    counts_w = np.diff(np.append(starts_w, width))
    sums = np.add.reduceat(np.add.reduceat(data, starts_h, axis=1), starts_w, axis=2)
    return sums / np.multiply.outer(counts_h, counts_w)[None, :, :]


@lru_cache(maxsize=None)
def _axis_geometry(coarse: int, fine: int) -> tuple:
    """Source indices and interpolation fractions for one upsampled axis."""
    centers = (np.arange(fine) + 0.5) * (coarse / fine) - 0.5
    centers = np.clip(centers, 0.0, coarse - 1.0)
    i0 = np.floor(centers).astype(np.intp)
    i0 = np.minimum(i0, coarse - 1)
    i1 = np.minimum(i0 + 1, coarse - 1)
    frac = centers - i0
    return i0, i1, frac


def _bilinear_upsample(coarse: np.ndarray, height: int, width: int) -> np.ndarray:
    hc, wc = coarse.shape[1], coarse.shape[2]
    y0, y1, fy = _axis_geometry(hc, height)
    x0, x1, fx = _axis_geometry(wc, width)
    # lerp as a + f*(b - a): exact when neighbours are equal, so constants survive
    rows = coarse[:, y0, :] + fy[None, :, None] * (coarse[:, y1, :] - coarse[:, y0, :])
    return rows[:, :, x0] + fx[None, None, :] * (rows[:, :, x1] - rows[:, :, x0])


def _nearest_upsample(coarse: np.ndarray, height: int, width: int) -> np.ndarray:
    hc, wc = coarse.shape[1], coarse.shape[2]
    ys = np.minimum(((np.arange(height) + 0.5) * (hc / height)).astype(np.intp), hc - 1)
    xs = np.minimum(((np.arange(width) + 0.5) * (wc / width)).astype(np.intp), wc - 1)
    return coarse[:, ys, :][:, :, xs]


def lowpass(field: Field, scale: int, upsample: str = "bilinear") -> Field:
    """Low-frequency part of a field at the given scale factor."""
    _check_scale(scale, upsample)
    if scale == 1:
        return field
    coarse = _box_downsample(field.data, scale)
    if upsample == "bilinear":
        up = _bilinear_upsample(coarse, field.height, field.width)
    else:
        up = _nearest_upsample(coarse, field.height, field.width)
    return Field(up)


def split(field: Field, scale: int, upsample: str = "bilinear") -> FreqSplit:
    """Decompose a field into low + high parts; low + high reconstructs the input."""
    low = lowpass(field, scale, upsample)
    high = field - low
    return FreqSplit(low=low, high=high, scale=scale)
