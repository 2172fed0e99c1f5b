"""Desk-scale laboratory for classifier-free guidance arithmetic."""

__version__ = "0.1.0"

from .field import Field
from .frequency import FreqSplit, lowpass, split
from .guidance import (
    GuidanceConfig,
    VelocityPair,
    apg_update,
    cfg_update,
    combination_update,
    diag_update,
    downweight,
    lfcfg_update,
)
from .metrics import clipped_fraction, saturation, toy_accumulation
from .models import GaussianMixtureModel, ReplayModel, TestbedSpec, build_testbed, load_manifest
from .regions import ThresholdPolicy, change_map, low_change_mask, mask_fraction, rho_for, threshold
from .sampler import Schedule, Trajectory, euler_step, run

__all__ = [
    "Field",
    "FreqSplit",
    "GaussianMixtureModel",
    "GuidanceConfig",
    "ReplayModel",
    "Schedule",
    "TestbedSpec",
    "ThresholdPolicy",
    "Trajectory",
    "VelocityPair",
    "apg_update",
    "build_testbed",
    "cfg_update",
    "change_map",
    "clipped_fraction",
    "combination_update",
    "diag_update",
    "downweight",
    "euler_step",
    "lfcfg_update",
    "load_manifest",
    "low_change_mask",
    "lowpass",
    "mask_fraction",
    "rho_for",
    "run",
    "saturation",
    "split",
    "threshold",
    "toy_accumulation",
]
