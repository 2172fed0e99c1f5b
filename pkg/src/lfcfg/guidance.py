"""Guided-update formulas.

Everything here returns a velocity field; the integrator applies dt. The
variants:

  cfg      plain classifier-free guidance  v_uc + w*(v_c - v_uc)
  lfcfg    low-frequency down-weighted guidance: both terms are split into
           low/high parts at the configured scale, low-change regions are
           detected from the cached previous-step pair, their low-frequency
           signal is scaled by rho, and the result recombines as combination 3
           (down-weighting applied inside the scaled difference term) plus the
           untouched high-frequency guidance
  apg      a projection baseline that re-weights the component of the
           guidance difference parallel to the conditional output
  diag-*   zeroing probes: drop the high-frequency parts entirely, or zero
           the low-frequency signal inside low-change (rate < mean - std) or
           high-change (rate > mean + std) regions, then apply plain guidance

The two masks are applied to their own term (conditional mask on the
conditional low part and vice versa); they are only merged when
``unify_masks`` is set, in which case their intersection is used for both.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import ConfigError, DegenerateDirectionError, ShapeError
from .field import Field
from .frequency import split
from .regions import (
    ThresholdPolicy,
    change_map,
    change_map_per_channel,
    low_change_mask,
    mask_fraction,
    rho_for,
    threshold,
)

MODES = (
    "cfg",
    "lfcfg",
    "apg",
    "diag-zero-high",
    "diag-zero-low-change",
    "diag-zero-high-change",
)
DIAG_MODES = MODES[3:]
FIRST_STEP_CHOICES = ("cfg", "uncond")


@dataclass(frozen=True)
class VelocityPair:
    """Unconditional and conditional model outputs at one timestep."""

    v_uc: Field
    v_c: Field
    t: float

    def __post_init__(self):
        if self.v_uc.shape != self.v_c.shape:
            raise ShapeError(f"pair shape mismatch: {self.v_uc.shape} vs {self.v_c.shape}")
        if not (0.0 <= self.t <= 1.0):
            raise ConfigError(f"timestep must lie in [0, 1], got {self.t}")


@dataclass(frozen=True)
class GuidanceConfig:
    w: float = 7.5
    mode: str = "lfcfg"
    filter_scale: int = 8
    upsample: str = "bilinear"
    combination: int = 3
    policy: ThresholdPolicy = dataclass_field(default_factory=ThresholdPolicy)
    apg_eta: float = 0.0
    unify_masks: bool = False
    per_channel_regions: bool = False
    # cached modes take the raw unconditional branch on step one (no cache exists
    # yet); with an exact mixture backend a full-guidance first step collapses the
    # class posterior immediately and leaves nothing for later steps to modify
    first_step: str = "uncond"

    def __post_init__(self):
        if self.w < 0:
            raise ConfigError(f"guidance scale must be >= 0, got {self.w}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.combination not in (1, 2, 3, 4):
            raise ConfigError(f"combination must be 1..4, got {self.combination}")
        if not (0.0 <= self.apg_eta <= 1.0):
            raise ConfigError(f"apg_eta must lie in [0, 1], got {self.apg_eta}")
        if self.first_step not in FIRST_STEP_CHOICES:
            raise ConfigError(f"first_step must be one of {FIRST_STEP_CHOICES}")


@dataclass(frozen=True)
class StepDiagnostics:
    """Per-step region statistics recorded into the trajectory."""

    mask_fraction_uc: float
    mask_fraction_c: float
    rho: float


def cfg_update(pair: VelocityPair, w: float) -> Field:
    return Field(pair.v_uc.data + w * (pair.v_c.data - pair.v_uc.data))


def downweight(v_low: Field, mask: np.ndarray, rho: float) -> Field:
    """rho * v * m + v * (1 - m); the mask broadcasts over channels when 2-d."""
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 2:
        if m.shape != v_low.shape[1:]:
            raise ShapeError(f"mask shape {m.shape} does not match spatial dims {v_low.shape[1:]}")
        m = m[None, :, :]
    elif m.shape != v_low.shape:
        raise ShapeError(f"mask shape {m.shape} does not match field shape {v_low.shape}")
    return Field(rho * v_low.data * m + v_low.data * (1.0 - m))


def _combine(
    variant: int,
    low_uc: np.ndarray,
    low_c: np.ndarray,
    high_uc: np.ndarray,
    high_c: np.ndarray,
    mod_uc: np.ndarray,
    mod_c: np.ndarray,
    w: float,
) -> Field:
    if variant == 1:
        low = mod_uc + w * (mod_c - mod_uc)
    elif variant == 2:
        low = low_uc + w * (mod_c - low_uc)
    elif variant == 3:
        low = low_uc + w * (mod_c - mod_uc)
    elif variant == 4:
        low = mod_uc + w * (low_c - mod_uc)
    else:
        raise ConfigError(f"unknown combination variant {variant}")
    return Field(low + high_uc + w * (high_c - high_uc))


def combination_update(
    variant: int,
    pair: VelocityPair,
    modified_low_uc: Field,
    modified_low_c: Field,
    config: GuidanceConfig,
) -> Field:
    """Recombine modified low-frequency terms with the untouched high-frequency guidance."""
    if modified_low_uc.shape != pair.v_uc.shape or modified_low_c.shape != pair.v_uc.shape:
        raise ShapeError("modified low parts must match the pair shape")
    split_uc = split(pair.v_uc, config.filter_scale, config.upsample)
    split_c = split(pair.v_c, config.filter_scale, config.upsample)
    return _combine(
        variant,
        split_uc.low.data,
        split_c.low.data,
        split_uc.high.data,
        split_c.high.data,
        modified_low_uc.data,
        modified_low_c.data,
        config.w,
    )


def _region_masks(pair: VelocityPair, prev: VelocityPair, config: GuidanceConfig):
    """Low parts of the current pair plus per-term low-change masks."""
    s, kernel = config.filter_scale, config.upsample
    split_uc = split(pair.v_uc, s, kernel)
    split_c = split(pair.v_c, s, kernel)
    prev_low_uc = split(prev.v_uc, s, kernel).low
    prev_low_c = split(prev.v_c, s, kernel).low
    rate = change_map_per_channel if config.per_channel_regions else change_map
    r_uc = rate(prev_low_uc, split_uc.low)
    r_c = rate(prev_low_c, split_c.low)
    m_uc = low_change_mask(r_uc, threshold(r_uc, config.policy.k))
    m_c = low_change_mask(r_c, threshold(r_c, config.policy.k))
    if config.unify_masks:
        m_uc = m_c = m_uc * m_c
    return split_uc, split_c, r_uc, r_c, m_uc, m_c


def guided_step(
    pair: VelocityPair, prev: VelocityPair, config: GuidanceConfig
) -> tuple[Field, StepDiagnostics]:
    """One cached-step low-frequency guided update with its diagnostics."""
    if pair.v_uc.shape != prev.v_uc.shape:
        raise ShapeError(f"cached pair shape {prev.v_uc.shape} does not match {pair.v_uc.shape}")
    split_uc, split_c, _, _, m_uc, m_c = _region_masks(pair, prev, config)
    frac_uc, frac_c = mask_fraction(m_uc), mask_fraction(m_c)
    rho = rho_for(config.policy, (frac_uc + frac_c) / 2.0)
    mod_uc = downweight(split_uc.low, m_uc, rho)
    mod_c = downweight(split_c.low, m_c, rho)
    out = _combine(
        config.combination,
        split_uc.low.data,
        split_c.low.data,
        split_uc.high.data,
        split_c.high.data,
        mod_uc.data,
        mod_c.data,
        config.w,
    )
    return out, StepDiagnostics(frac_uc, frac_c, rho)


def lfcfg_update(pair: VelocityPair, prev: VelocityPair, config: GuidanceConfig) -> Field:
    out, _ = guided_step(pair, prev, config)
    return out


def diag_update(
    mode: str, pair: VelocityPair, prev: VelocityPair, config: GuidanceConfig
) -> tuple[Field, StepDiagnostics]:
    """Zeroing probes; the returned diagnostics carry the zeroed fractions (rho stays 1)."""
    if mode not in DIAG_MODES:
        raise ConfigError(f"diagnostic mode must be one of {DIAG_MODES}, got {mode!r}")
    s, kernel, w = config.filter_scale, config.upsample, config.w
    split_uc = split(pair.v_uc, s, kernel)
    split_c = split(pair.v_c, s, kernel)

    if mode == "diag-zero-high":
        out = Field(split_uc.low.data + w * (split_c.low.data - split_uc.low.data))
        return out, StepDiagnostics(0.0, 0.0, 1.0)

    rate = change_map_per_channel if config.per_channel_regions else change_map
    prev_low_uc = split(prev.v_uc, s, kernel).low
    prev_low_c = split(prev.v_c, s, kernel).low
    r_uc = rate(prev_low_uc, split_uc.low)
    r_c = rate(prev_low_c, split_c.low)
    if mode == "diag-zero-low-change":
        z_uc = (r_uc < threshold(r_uc, -1.0)).astype(np.float64)
        z_c = (r_c < threshold(r_c, -1.0)).astype(np.float64)
    else:
        z_uc = (r_uc > threshold(r_uc, 1.0)).astype(np.float64)
        z_c = (r_c > threshold(r_c, 1.0)).astype(np.float64)
    if z_uc.ndim == 2:
        z_uc, z_c = z_uc[None], z_c[None]
    v_uc = Field(split_uc.low.data * (1.0 - z_uc) + split_uc.high.data)
    v_c = Field(split_c.low.data * (1.0 - z_c) + split_c.high.data)
    out = cfg_update(VelocityPair(v_uc, v_c, pair.t), w)
    return out, StepDiagnostics(float(z_uc.mean()), float(z_c.mean()), 1.0)


def apg_update(pair: VelocityPair, w: float, eta: float) -> Field:
    """Projection baseline: re-weight the guidance component parallel to v_c.

    The projection uses a single inner product over the whole flattened field.
    Implemented as v_uc + w*(delta + (eta - 1)*parallel) so that eta = 1
    reproduces plain guidance exactly.
    """
    delta = pair.v_c.data - pair.v_uc.data
    denom = float(np.sum(pair.v_c.data * pair.v_c.data))
    if denom < 1e-12:
        raise DegenerateDirectionError("conditional term has (numerically) zero norm")
    coeff = float(np.sum(delta * pair.v_c.data)) / denom
    parallel = coeff * pair.v_c.data
    return Field(pair.v_uc.data + w * (delta + (eta - 1.0) * parallel))
