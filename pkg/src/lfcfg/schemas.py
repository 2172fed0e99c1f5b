"""Pydantic request/response models for the service; the CLI shares them.

Every config model rejects unknown keys so a typo in a config file fails
loudly before any computation. Tensor payloads travel as base64-encoded NPY
bytes; CSV artifacts travel as plain strings and are written to disk verbatim
by the client, which keeps outputs byte-reproducible across transports.
"""

from __future__ import annotations

import base64
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field as PydanticField, model_validator

from .guidance import GuidanceConfig
from .models import TestbedSpec
from .regions import ThresholdPolicy


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TestbedSpecModel(StrictModel):
    classes: int = PydanticField(default=2, ge=1)
    channels: int = PydanticField(default=3, ge=1)
    height: int = PydanticField(default=64, ge=1)
    width: int = PydanticField(default=64, ge=1)
    pattern_seed: int = 7
    sigma: float = PydanticField(default=0.35, gt=0)
    contrast: float = PydanticField(default=0.9, ge=0)
    blobs_per_class: int = PydanticField(default=3, ge=1)
    blob_width_range: tuple[float, float] = (0.40, 0.70)

    def to_core(self) -> TestbedSpec:
        return TestbedSpec(**self.model_dump())


class BackendModel(StrictModel):
    kind: Literal["analytic", "replay"] = "analytic"
    testbed: TestbedSpecModel = PydanticField(default_factory=TestbedSpecModel)
    manifest: Optional[str] = None
    condition: int = PydanticField(default=0, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "replay" and not self.manifest:
            raise ValueError("replay backend requires a manifest path")
        return self


class ThresholdPolicyModel(StrictModel):
    k: float = 1.0
    rho_mode: Literal["paper-fixed", "empirical", "manual"] = "paper-fixed"
    rho_manual: Optional[float] = PydanticField(default=None, gt=0, le=1)

    def to_core(self) -> ThresholdPolicy:
        return ThresholdPolicy(k=self.k, rho_mode=self.rho_mode, rho_manual=self.rho_manual)


class GuidanceModel(StrictModel):
    w: float = PydanticField(default=7.5, ge=0)
    mode: Literal[
        "cfg", "lfcfg", "apg", "diag-zero-high", "diag-zero-low-change", "diag-zero-high-change"
    ] = "lfcfg"
    filter_scale: Literal[1, 2, 4, 8] = 8
    upsample: Literal["bilinear", "nearest"] = "bilinear"
    combination: Literal[1, 2, 3, 4] = 3
    threshold: ThresholdPolicyModel = PydanticField(default_factory=ThresholdPolicyModel)
    apg_eta: float = PydanticField(default=0.0, ge=0, le=1)
    unify_masks: bool = False
    per_channel_regions: bool = False
    first_step: Literal["cfg", "uncond"] = "uncond"

    def to_core(self) -> GuidanceConfig:
        return GuidanceConfig(
            w=self.w,
            mode=self.mode,
            filter_scale=self.filter_scale,
            upsample=self.upsample,
            combination=self.combination,
            policy=self.threshold.to_core(),
            apg_eta=self.apg_eta,
            unify_masks=self.unify_masks,
            per_channel_regions=self.per_channel_regions,
            first_step=self.first_step,
        )


class RunConfigModel(StrictModel):
    backend: BackendModel = PydanticField(default_factory=BackendModel)
    guidance: GuidanceModel = PydanticField(default_factory=GuidanceModel)
    steps: int = PydanticField(default=20, ge=2)
    seeds: list[int] = PydanticField(min_length=1)
    snapshots: bool = False
    jobs: int = PydanticField(default=1, ge=1)
    out: Optional[str] = None  # client-side output directory; the service ignores it


class StepTensors(StrictModel):
    t: float
    v_uc_npy_b64: str
    v_c_npy_b64: str


class RunResult(StrictModel):
    seed: int
    saturation: Optional[float]
    clipped_fraction: float
    image_ppm_b64: Optional[str]
    trajectory_csv: str
    tensors: Optional[list[StepTensors]] = None


class SampleRequest(StrictModel):
    config: RunConfigModel
    record_tensors: bool = False
    keep_images: bool = True


class SampleResponse(StrictModel):
    runs: list[RunResult]
    summary_csv: str


class AblateRequest(StrictModel):
    config: RunConfigModel
    axis: Literal["w", "k", "s", "combination"]
    values: list[float] = PydanticField(min_length=1)


class AblateCell(StrictModel):
    value: float
    saturation_mean: Optional[float]
    saturation_std: Optional[float]
    clipped_mean: float
    clipped_std: float


class AblateResponse(StrictModel):
    axis: str
    cells: list[AblateCell]
    summary_csv: str


class DiagnoseRequest(StrictModel):
    config: RunConfigModel
    modes: list[str] = PydanticField(
        default=["cfg", "diag-zero-high", "diag-zero-low-change", "diag-zero-high-change"],
        min_length=1,
    )


class DiagnoseRow(StrictModel):
    mode: str
    saturation_mean: Optional[float]
    clipped_mean: float


class DiagnoseResponse(StrictModel):
    rows: list[DiagnoseRow]
    metrics_csv: str
    images_ppm_b64: dict[str, str]


class RegionMapsRequest(StrictModel):
    config: RunConfigModel
    step: int = PydanticField(default=1, ge=1)


class RegionMapsResponse(StrictModel):
    step: int
    t: float
    gamma_uc: float
    gamma_c: float
    mask_fraction_uc: float
    mask_fraction_c: float
    change_uc_ppm_b64: str
    change_c_ppm_b64: str
    mask_uc_ppm_b64: str
    mask_c_ppm_b64: str


class ReplayRequest(StrictModel):
    manifest: str
    guidance: GuidanceModel = PydanticField(default_factory=GuidanceModel)
    emit_dtype: Literal["float32", "float64"] = "float32"


class ReplayStepResult(StrictModel):
    index: int
    t: float
    composed_npy_b64: str
    mask_fraction_uc: float
    mask_fraction_c: float
    rho: float
    velocity_norm: float


class ReplayResponse(StrictModel):
    steps: list[ReplayStepResult]
    metrics_csv: str


class HealthResponse(StrictModel):
    status: str
    version: str


def b64_of(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def bytes_of(b64: str) -> bytes:
    return base64.b64decode(b64.encode("ascii"))
