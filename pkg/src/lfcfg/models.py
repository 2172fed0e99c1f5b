"""Velocity-field backends.

``GaussianMixtureModel`` is an analytic stand-in for a trained network: data
is a K-class Gaussian mixture over fields, noise is standard normal, and the
linear interpolation path x_t = (1-t)*x_0 + t*x_1 gives closed-form
conditional and marginal velocities E[x_1 - x_0 | x_t]. With (x_0, x_1, x_t)
jointly Gaussian per class,

    D_c     = (1-t)^2 sigma_c^2 + t^2
    v_c(x)  = ((t - (1-t) sigma_c^2) / D_c) * (x - (1-t) mu_c) - mu_c

and the marginal velocity is the posterior-weighted mixture of the per-class
velocities, with weights proportional to pi_c * N(x; (1-t) mu_c, D_c I)
computed in log-space over all elements jointly.

``ReplayModel`` serves recorded (v_uc, v_c) pairs from a manifest; it is
open-loop — evaluate() ignores x_t, so replayed runs recompose velocities
rather than re-integrate trajectories.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import ConfigError, DegeneratePosteriorError, ManifestError, ShapeError
from .field import Field
from .frequency import lowpass
from .guidance import VelocityPair
from .npyio import npy_dtype, parse_npy, write_bytes_atomic


class VelocityModel(Protocol):
    """Anything that can produce a velocity field for (x_t, t, condition)."""

    @property
    def shape(self) -> tuple: ...

    def evaluate(self, x: Field, t: float, condition: int | None) -> Field: ...


@dataclass(frozen=True)
class TestbedSpec:
    """Recipe for a smooth-blob mixture testbed."""

    __test__ = False  # keep pytest collection away from the Test* name

    classes: int = 2
    channels: int = 3
    height: int = 64
    width: int = 64
    pattern_seed: int = 7
    sigma: float = 0.35
    contrast: float = 0.9
    blobs_per_class: int = 3
    blob_width_range: tuple = (0.40, 0.70)

    def __post_init__(self):
        if self.classes < 1 or self.blobs_per_class < 1:
            raise ConfigError("testbed needs at least one class and one blob")
        if min(self.channels, self.height, self.width) < 1:
            raise ConfigError(f"invalid testbed dims {(self.channels, self.height, self.width)}")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if self.contrast < 0:
            raise ConfigError(f"contrast must be >= 0, got {self.contrast}")
        lo, hi = self.blob_width_range
        if not (0 < lo <= hi):
            raise ConfigError(f"blob width range must satisfy 0 < lo <= hi, got {self.blob_width_range}")


class GaussianMixtureModel:
    def __init__(self, means: np.ndarray, sigmas, priors) -> None:
        means = np.asarray(means, dtype=np.float64)
        if means.ndim != 4:
            raise ConfigError(f"means must be (K,C,H,W), got shape {means.shape}")
        sigmas = np.asarray(sigmas, dtype=np.float64)
        priors = np.asarray(priors, dtype=np.float64)
        if sigmas.shape != (means.shape[0],) or priors.shape != (means.shape[0],):
            raise ConfigError("need one sigma and one prior per class")
        if np.any(sigmas <= 0):
            raise ConfigError("sigmas must be positive")
        if np.any(priors < 0) or priors.sum() <= 0:
            raise ConfigError("priors must be nonnegative with positive sum")
        if not np.isfinite(means).all():
            raise ConfigError("means must be finite")
        self.means = means
        self.sigmas = sigmas
        self.priors = priors / priors.sum()

    @property
    def classes(self) -> int:
        return self.means.shape[0]

    @property
    def shape(self) -> tuple:
        return tuple(self.means.shape[1:])

    def _check_t(self, t: float) -> None:
        if not (0.0 <= t <= 1.0):
            raise ConfigError(f"timestep must lie in [0, 1], got {t}")

    def conditional_velocity(self, x: Field, t: float, condition: int) -> Field:
        self._check_t(t)
        if not (0 <= condition < self.classes):
            raise ConfigError(f"condition {condition} outside 0..{self.classes - 1}")
        mu = self.means[condition]
        var = self.sigmas[condition] ** 2
        denom = (1.0 - t) ** 2 * var + t * t
        coeff = (t - (1.0 - t) * var) / denom
        return Field(coeff * (x.data - (1.0 - t) * mu) - mu)

    def posterior_weights(self, x: Field, t: float) -> np.ndarray:
        """P(class | x_t), computed in log-space with max subtraction."""
        self._check_t(t)
        n = x.data.size
        logs = np.empty(self.classes)
        for c in range(self.classes):
            var = self.sigmas[c] ** 2
            d = (1.0 - t) ** 2 * var + t * t
            resid = x.data - (1.0 - t) * self.means[c]
            logs[c] = (
                math.log(self.priors[c])
                - 0.5 * float(np.sum(resid * resid)) / d
                - 0.5 * n * math.log(2.0 * math.pi * d)
            )
        peak = logs.max()
        if not np.isfinite(peak):
            raise DegeneratePosteriorError("all mixture log-weights are non-finite")
        weights = np.exp(logs - peak)
        return weights / weights.sum()

    def uncond_velocity(self, x: Field, t: float) -> Field:
        weights = self.posterior_weights(x, t)
        acc = np.zeros_like(x.data)
        for c in range(self.classes):
            acc += weights[c] * self.conditional_velocity(x, t, c).data
        return Field(acc)

    def evaluate(self, x: Field, t: float, condition: int | None) -> Field:
        if x.shape != self.shape:
            raise ShapeError(f"state shape {x.shape} does not match model shape {self.shape}")
        if condition is None:
            return self.uncond_velocity(x, t)
        return self.conditional_velocity(x, t, condition)


def build_testbed(spec: TestbedSpec) -> GaussianMixtureModel:
    """Mixture whose class means are smooth broad-blob fields.

    Blob widths are a sizeable fraction of the image so nearly all of the
    mean fields' energy sits below the default filter cutoff; each class is
    rescaled to peak magnitude ``contrast``.
    """
    rng = np.random.default_rng(spec.pattern_seed)
    ys = np.arange(spec.height, dtype=np.float64)[:, None]
    xs = np.arange(spec.width, dtype=np.float64)[None, :]
    extent = min(spec.height, spec.width)
    means = np.zeros((spec.classes, spec.channels, spec.height, spec.width))
    for c in range(spec.classes):
        for _ in range(spec.blobs_per_class):
            cy = rng.uniform(0.2, 0.8) * spec.height
            cx = rng.uniform(0.2, 0.8) * spec.width
            width = rng.uniform(*spec.blob_width_range) * extent
            bump = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * width * width))
            amps = rng.uniform(-1.0, 1.0, size=spec.channels)
            means[c] += amps[:, None, None] * bump[None, :, :]
        peak = np.abs(means[c]).max()
        if peak > 0:
            means[c] *= spec.contrast / peak
        else:
            means[c] *= 0.0
    sigmas = np.full(spec.classes, spec.sigma)
    priors = np.full(spec.classes, 1.0 / spec.classes)
    return GaussianMixtureModel(means, sigmas, priors)


def low_frequency_energy_fraction(field: Field, scale: int = 8) -> float:
    """Fraction of a field's energy captured by the low-pass operator."""
    total = float(np.sum(field.data**2))
    if total == 0.0:
        return 1.0
    low = lowpass(field, scale)
    return float(np.sum(low.data**2)) / total


MANIFEST_VERSION = 1
_MANIFEST_KEYS = {"version", "dtype", "shape", "steps", "source"}
_STEP_KEYS = {"t", "v_uc", "v_c"}


class ReplayModel:
    """Open-loop backend serving recorded velocity pairs in step order."""

    def __init__(self, shape: tuple, dtype: str, source: str, pairs: list) -> None:
        self._shape = tuple(shape)
        self.dtype = dtype
        self.source = source
        self.pairs = pairs

    @property
    def shape(self) -> tuple:
        return self._shape

    @property
    def steps(self) -> int:
        return len(self.pairs)

    @property
    def ts(self) -> list:
        return [p.t for p in self.pairs]

    def pair(self, index: int) -> VelocityPair:
        return self.pairs[index]

    def evaluate(self, x: Field, t: float, condition: int | None) -> Field:
        # open-loop: x is ignored; only the timestep selects the recording
        for p in self.pairs:
            if math.isclose(p.t, t, rel_tol=0.0, abs_tol=1e-9):
                return p.v_c if condition is not None else p.v_uc
        raise ManifestError(f"no recorded step at t={t}")


def load_manifest(path: str) -> ReplayModel:
    """Load and strictly validate a replay manifest plus its tensor files."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ManifestError(f"cannot read manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) != _MANIFEST_KEYS:
        raise ManifestError(
            f"manifest keys must be {sorted(_MANIFEST_KEYS)}, got {sorted(doc) if isinstance(doc, dict) else type(doc)}"
        )
    if doc["version"] != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {doc['version']!r}")
    if doc["dtype"] not in ("float32", "float64"):
        raise ManifestError(f"dtype must be float32 or float64, got {doc['dtype']!r}")
    shape = doc["shape"]
    if not (isinstance(shape, list) and len(shape) == 3 and all(isinstance(d, int) and d >= 1 for d in shape)):
        raise ManifestError(f"shape must be a [C,H,W] list of positive ints, got {shape!r}")
    steps = doc["steps"]
    if not isinstance(steps, list) or not steps:
        raise ManifestError("steps must be a non-empty list")

    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    prev_t = None
    for i, step in enumerate(steps):
        if not isinstance(step, dict) or set(step) != _STEP_KEYS:
            raise ManifestError(f"step {i}: keys must be {sorted(_STEP_KEYS)}")
        t = step["t"]
        if not isinstance(t, (int, float)) or not (0.0 <= t <= 1.0):
            raise ManifestError(f"step {i}: t must be a number in [0, 1], got {t!r}")
        if prev_t is not None and not (t < prev_t):
            raise ManifestError(f"step {i}: t values must be strictly decreasing ({t} after {prev_t})")
        prev_t = t
        fields = {}
        for key in ("v_uc", "v_c"):
            fpath = os.path.join(base, step[key])
            if not os.path.exists(fpath):
                raise ManifestError(f"step {i}: missing tensor file {step[key]!r}")
            with open(fpath, "rb") as fh:
                buf = fh.read()
            file_dtype = npy_dtype(buf)
            if file_dtype != doc["dtype"]:
                raise ManifestError(
                    f"step {i}: {key} dtype {file_dtype} does not match declared {doc['dtype']}"
                )
            arr = parse_npy(buf)
            if arr.shape != tuple(shape):
                raise ManifestError(
                    f"step {i}: {key} shape {arr.shape} does not match declared {tuple(shape)}"
                )
            fields[key] = Field(arr)
        pairs.append(VelocityPair(fields["v_uc"], fields["v_c"], float(t)))
    return ReplayModel(tuple(shape), doc["dtype"], str(doc["source"]), pairs)


def write_manifest(path: str, dtype: str, shape: tuple, steps: list, source: str) -> None:
    """Emit a manifest document; tensor paths are relative to the manifest."""
    doc = {
        "version": MANIFEST_VERSION,
        "dtype": dtype,
        "shape": list(shape),
        "steps": steps,
        "source": source,
    }
    write_bytes_atomic(path, (json.dumps(doc, indent=2) + "\n").encode("utf-8"))
