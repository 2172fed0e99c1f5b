"""Change-rate maps, adaptive thresholds, low-change masks, and the down-weight ratio.

The change map measures, per spatial location, the Euclidean distance across
channels between consecutive-step low-frequency fields. Locations whose rate
falls strictly below the adaptive threshold mean + k*std form the low-change
region; the ratio rho down-weights the low-frequency signal there.

Statistics use the population standard deviation (divide by N). Masks are
kept as 0/1 float arrays so they broadcast cleanly over channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .field import Field

RHO_MODES = ("paper-fixed", "empirical", "manual")

# Fixed low/high region proportions assumed by the quasi-Gaussian argument:
# k=1 -> 33.3/66.7, k=2 -> 10/90; the k=3 entry extrapolates the same pattern
# (1/99) since no value is given for it anywhere.
PAPER_FIXED_RHO = {
    1.0: 0.333 / 0.667,
    2.0: 0.10 / 0.90,
    3.0: 0.01 / 0.99,
}

_EPS = 1e-6


@dataclass(frozen=True)
class ThresholdPolicy:
    """How the threshold multiplier k and the down-weight ratio rho are chosen."""

    k: float = 1.0
    rho_mode: str = "paper-fixed"
    rho_manual: float | None = None

    def __post_init__(self):
        if self.rho_mode not in RHO_MODES:
            raise ConfigError(f"rho_mode must be one of {RHO_MODES}, got {self.rho_mode!r}")
        if self.rho_manual is not None and not (0.0 < self.rho_manual <= 1.0):
            raise ConfigError(f"manual rho must lie in (0, 1], got {self.rho_manual}")


def change_map(prev_low: Field, curr_low: Field) -> np.ndarray:
    """Per-location Euclidean distance across channels; returns an H×W map."""
    if prev_low.shape != curr_low.shape:
        raise ShapeError(f"shape mismatch: {prev_low.shape} vs {curr_low.shape}")
    delta = curr_low.data - prev_low.data
    return np.sqrt(np.sum(delta * delta, axis=0))


def change_map_per_channel(prev_low: Field, curr_low: Field) -> np.ndarray:
    """|delta| per channel (C×H×W); the sensitivity-analysis alternative."""
    if prev_low.shape != curr_low.shape:
        raise ShapeError(f"shape mismatch: {prev_low.shape} vs {curr_low.shape}")
    return np.abs(curr_low.data - prev_low.data)


def threshold(rate_map: np.ndarray, k: float) -> float:
    """Adaptive threshold mean + k*std over all locations (population std)."""
    arr = np.asarray(rate_map, dtype=np.float64)
    if arr.size == 0:
        raise ShapeError("change map is empty")
    return float(arr.mean() + k * arr.std())


def low_change_mask(rate_map: np.ndarray, gamma: float) -> np.ndarray:
    """0/1 mask of locations with rate strictly below gamma."""
    return (np.asarray(rate_map, dtype=np.float64) < gamma).astype(np.float64)


def mask_fraction(mask: np.ndarray) -> float:
    arr = np.asarray(mask, dtype=np.float64)
    return float(arr.mean()) if arr.size else 0.0


def rho_for(policy: ThresholdPolicy, observed_fraction: float) -> float:
    """Down-weight ratio for one step.

    paper-fixed uses the tabulated proportions for k in {1, 2, 3}; empirical
    derives (1-p)/p from the observed low-change fraction, clamped into
    (0, 1]; manual returns the configured value.
    """
    if not (0.0 <= observed_fraction <= 1.0):
        raise ConfigError(f"observed fraction must be in [0, 1], got {observed_fraction}")
    if policy.rho_mode == "manual":
        if policy.rho_manual is None:
            raise ConfigError("rho_mode 'manual' requires rho_manual")
        return policy.rho_manual
    if policy.rho_mode == "empirical":
        p = max(observed_fraction, _EPS)
        return float(min(max((1.0 - p) / p, _EPS), 1.0))
    rho = PAPER_FIXED_RHO.get(float(policy.k))
    if rho is None:
        raise ConfigError(
            f"no fixed down-weight ratio tabulated for k={policy.k}; "
            "use rho_mode 'empirical' or 'manual'"
        )
    return rho
