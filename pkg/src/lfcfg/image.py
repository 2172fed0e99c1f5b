"""Quantization of fields to 8-bit images and binary PPM (P6) output."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .field import Field
from .npyio import write_bytes_atomic


@dataclass(frozen=True)
class ImageU8:
    """H×W×3 8-bit image."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ShapeError(f"pixels must be (H,W,3) uint8, got {px.shape} {px.dtype}")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def to_image(field: Field) -> ImageU8:
    """Map field units [-1, 1] to bytes: clamp, rescale, round half-up."""
    if field.channels != 3:
        raise ShapeError(f"image conversion needs 3 channels, got {field.channels}")
    clamped = np.clip(field.data, -1.0, 1.0)
    scaled = (clamped + 1.0) / 2.0 * 255.0
    # np.round is half-even; the quantization contract is half-up
    bytes_ = np.floor(scaled + 0.5).astype(np.uint8)
    return ImageU8(np.transpose(bytes_, (1, 2, 0)))


def ppm_bytes(image: ImageU8) -> bytes:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.pixels.tobytes()


def write_ppm(image: ImageU8, path: str) -> None:
    write_bytes_atomic(path, ppm_bytes(image))


def heatmap(map2d: np.ndarray, lo: float | None = None, hi: float | None = None) -> ImageU8:
    """Grayscale rendering of an H×W map (used for masks and change maps)."""
    arr = np.asarray(map2d, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"heatmap input must be 2-dimensional, got ndim={arr.ndim}")
    lo = float(arr.min()) if lo is None else lo
    hi = float(arr.max()) if hi is None else hi
    span = hi - lo
    unit = np.zeros_like(arr) if span <= 0 else np.clip((arr - lo) / span, 0.0, 1.0)
    gray = np.floor(unit * 255.0 + 0.5).astype(np.uint8)
    return ImageU8(np.repeat(gray[:, :, None], 3, axis=2))
