"""Oversaturation and region-dynamics metrics.

Saturation is the mean HSV saturation channel of the image after mapping
field units into [0, 1]: per pixel (max - min) / max over channels, zero on
black pixels. The clipped fraction counts elements outside [-bound, bound]
before any clamping, which makes it a clean overshoot signal.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .field import Field
from .sampler import Trajectory

REPORT_COLUMNS = [
    "row",
    "step",
    "t",
    "mask_fraction_uc",
    "mask_fraction_c",
    "rho",
    "velocity_norm",
    "mean_abs_x",
    "saturation",
    "clipped_fraction",
]

SUMMARY_COLUMNS = [
    "seed",
    "saturation",
    "clipped_fraction",
    "mean_abs_final",
    "mask_fraction_uc_mean",
    "mask_fraction_c_mean",
    "rho_mean",
]


def saturation(field: Field, formula: str = "hsv-mean") -> float:
    """Colorfulness of a 3-channel field after clamping into [0, 1].

    "hsv-mean" is the reporting default: per pixel (max - min) / max, zero on
    black, averaged over pixels. "channel-std" (per-pixel std across channels)
    is available in case a different published metric needs matching.
    """
    if field.channels != 3:
        raise ShapeError(f"saturation needs 3 channels, got {field.channels}")
    unit = np.clip((field.data + 1.0) / 2.0, 0.0, 1.0)
    if formula == "hsv-mean":
        mx = unit.max(axis=0)
        mn = unit.min(axis=0)
        sat = np.where(mx > 0, (mx - mn) / np.where(mx > 0, mx, 1.0), 0.0)
    elif formula == "channel-std":
        sat = unit.std(axis=0)
    else:
        raise ValueError(f"unknown saturation formula {formula!r}")
    return float(sat.mean())


def clipped_fraction(field: Field, bound: float = 1.0) -> float:
    return float((np.abs(field.data) > bound).mean())


def toy_accumulation(w: float, steps: int, rate: float, start: float = 0.5) -> float:
    """Final value of a pixel receiving a constant per-step adjustment: start + w*T*rate."""
    return start + w * steps * rate


@dataclass(frozen=True)
class RunReport:
    seed: int
    saturation: float | None
    clipped_fraction: float
    mean_abs_final: float
    mask_fraction_uc_mean: float
    mask_fraction_c_mean: float
    rho_mean: float
    steps: list
    config: dict


def report(trajectory: Trajectory, config: dict | None = None) -> RunReport:
    if not trajectory.records:
        raise ValueError("trajectory has no step records")
    final = trajectory.final
    sat = saturation(final) if final.channels == 3 else None
    records = trajectory.records
    return RunReport(
        seed=trajectory.seed,
        saturation=sat,
        clipped_fraction=clipped_fraction(final),
        mean_abs_final=float(np.abs(final.data).mean()),
        mask_fraction_uc_mean=float(np.mean([r.mask_fraction_uc for r in records])),
        mask_fraction_c_mean=float(np.mean([r.mask_fraction_c for r in records])),
        rho_mean=float(np.mean([r.rho for r in records])),
        steps=records,
        config=dict(config or {}),
    )


def _cell(value) -> str:
    return "" if value is None else repr(value)


def report_csv(rep: RunReport) -> str:
    """One row per step plus a trailing summary row (fixed columns)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in rep.steps:
        writer.writerow(
            [
                "step",
                r.index,
                _cell(r.t),
                _cell(r.mask_fraction_uc),
                _cell(r.mask_fraction_c),
                _cell(r.rho),
                _cell(r.velocity_norm),
                _cell(r.mean_abs_x),
                "",
                "",
            ]
        )
    writer.writerow(
        [
            "summary",
            "",
            "",
            _cell(rep.mask_fraction_uc_mean),
            _cell(rep.mask_fraction_c_mean),
            _cell(rep.rho_mean),
            "",
            _cell(rep.mean_abs_final),
            _cell(rep.saturation),
            _cell(rep.clipped_fraction),
        ]
    )
    return out.getvalue()


def summary_csv(reports: list) -> str:
    """Across-seed summary: one row per seed plus a mean row."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for rep in reports:
        writer.writerow(
            [
                rep.seed,
                _cell(rep.saturation),
                _cell(rep.clipped_fraction),
                _cell(rep.mean_abs_final),
                _cell(rep.mask_fraction_uc_mean),
                _cell(rep.mask_fraction_c_mean),
                _cell(rep.rho_mean),
            ]
        )
    saturations = [r.saturation for r in reports if r.saturation is not None]
    writer.writerow(
        [
            "mean",
            _cell(float(np.mean(saturations)) if saturations else None),
            _cell(float(np.mean([r.clipped_fraction for r in reports]))),
            _cell(float(np.mean([r.mean_abs_final for r in reports]))),
            _cell(float(np.mean([r.mask_fraction_uc_mean for r in reports]))),
            _cell(float(np.mean([r.mask_fraction_c_mean for r in reports]))),
            _cell(float(np.mean([r.rho_mean for r in reports]))),
        ]
    )
    return out.getvalue()
