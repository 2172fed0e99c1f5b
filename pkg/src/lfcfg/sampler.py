"""Reverse-process Euler integrator with a one-step velocity cache.

The schedule walks t from 1 down to 0 in T uniform steps. Every step asks the
backend for the (unconditional, conditional) pair, refreshes the cache, and
advances x by the configured guided velocity times dt. Cached modes (lfcfg
and the zeroing diagnostics) need the pair from the previous step, so the
very first step falls back to plain guidance (or to the raw unconditional
velocity when ``first_step`` is "uncond").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, SamplingError
from .field import Field
from .guidance import (
    DIAG_MODES,
    GuidanceConfig,
    StepDiagnostics,
    VelocityPair,
    apg_update,
    cfg_update,
    diag_update,
    guided_step,
)
from .models import VelocityModel


@dataclass(frozen=True)
class Schedule:
    """Uniform reverse schedule: knots (t, t_next) from (1, (T-1)/T) to (1/T, 0)."""

    steps: int

    def __post_init__(self):
        if self.steps < 2:
            raise ConfigError(f"schedule needs at least 2 steps, got {self.steps}")

    @property
    def knots(self) -> list:
        T = self.steps
        return [((T - i) / T, (T - i - 1) / T) for i in range(T)]


@dataclass(frozen=True)
class StepRecord:
    index: int
    t: float
    prev_t: float | None
    mask_fraction_uc: float
    mask_fraction_c: float
    rho: float
    velocity_norm: float
    mean_abs_x: float
    snapshot: Field | None = None


@dataclass(frozen=True)
class Trajectory:
    seed: int
    initial: Field
    records: list
    final: Field


def euler_step(x: Field, v: Field, dt: float) -> Field:
    if x.shape != v.shape:
        raise ShapeError(f"state shape {x.shape} does not match velocity shape {v.shape}")
    return Field(x.data + v.data * dt)


def _composed_velocity(
    pair: VelocityPair,
    cache: VelocityPair | None,
    config: GuidanceConfig,
) -> tuple:
    idle = StepDiagnostics(0.0, 0.0, 1.0)
    if config.mode == "cfg":
        return cfg_update(pair, config.w), idle
    if config.mode == "apg":
        return apg_update(pair, config.w, config.apg_eta), idle
    if cache is None:
        if config.first_step == "uncond":
            return pair.v_uc, idle
        return cfg_update(pair, config.w), idle
    if config.mode in DIAG_MODES:
        return diag_update(config.mode, pair, cache, config)
    return guided_step(pair, cache, config)


def compose_replay(model, config: GuidanceConfig) -> list:
    """Recompose per-step guided velocities from recorded pairs (open loop).

    Returns (index, t, velocity, diagnostics) tuples; the first step uses the
    plain-guidance fallback exactly as a live run would.
    """
    cache: VelocityPair | None = None
    out = []
    for index, pair in enumerate(model.pairs):
        velocity, diag = _composed_velocity(pair, cache, config)
        cache = pair
        out.append((index, pair.t, velocity, diag))
    return out


def run(
    model: VelocityModel,
    config: GuidanceConfig,
    steps: int,
    seed: int,
    condition: int = 0,
    snapshots: bool = False,
) -> Trajectory:
    """Integrate one reverse trajectory; deterministic given (seed, config, model)."""
    schedule = Schedule(steps)
    rng = np.random.default_rng(seed)
    x = Field(rng.standard_normal(model.shape))
    initial = x
    cache: VelocityPair | None = None
    records = []
    for index, (t, t_next) in enumerate(schedule.knots):
        try:
            v_uc = model.evaluate(x, t, None)
            v_c = model.evaluate(x, t, condition)
        except Exception as exc:
            raise SamplingError(f"model evaluation failed at step {index} (t={t}): {exc}") from exc
        pair = VelocityPair(v_uc, v_c, t)
        prev_t = cache.t if cache is not None else None
        velocity, diag = _composed_velocity(pair, cache, config)
        cache = pair
        x = euler_step(x, velocity, t_next - t)
        records.append(
            StepRecord(
                index=index,
                t=t,
                prev_t=prev_t,
                mask_fraction_uc=diag.mask_fraction_uc,
                mask_fraction_c=diag.mask_fraction_c,
                rho=diag.rho,
                velocity_norm=float(np.linalg.norm(velocity.data)),
                mean_abs_x=float(np.abs(x.data).mean()),
                snapshot=x if snapshots else None,
            )
        )
    return Trajectory(seed=seed, initial=initial, records=records, final=x)
