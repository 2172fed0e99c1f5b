"""FastAPI service exposing the guidance lab.

Endpoints accept validated run configs and return every artifact inline
(CSV text, base64 PPM images, base64 NPY tensors), so a client owns all disk
writes and outputs stay byte-reproducible regardless of transport. Seeds fan
out across a bounded thread pool; results are collected in seed order.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from fastapi import FastAPI, HTTPException

from . import __version__
from .errors import (
    ConfigError,
    DegenerateDirectionError,
    DegeneratePosteriorError,
    ManifestError,
    NpyFormatError,
    SamplingError,
    ShapeError,
)
from .field import Field
from .frequency import split
from .guidance import MODES
from .image import heatmap, ppm_bytes, to_image
from .metrics import report, report_csv, summary_csv
from .models import build_testbed, load_manifest
from .npyio import npy_bytes
from .regions import change_map, low_change_mask, mask_fraction, threshold
from .sampler import compose_replay, run
from .schemas import (
    AblateCell,
    AblateRequest,
    AblateResponse,
    DiagnoseRequest,
    DiagnoseResponse,
    DiagnoseRow,
    HealthResponse,
    RegionMapsRequest,
    RegionMapsResponse,
    ReplayRequest,
    ReplayResponse,
    ReplayStepResult,
    RunConfigModel,
    RunResult,
    SampleRequest,
    SampleResponse,
    StepTensors,
    b64_of,
)

_CLIENT_FAULTS = (
    ConfigError,
    ManifestError,
    NpyFormatError,
    ShapeError,
    DegenerateDirectionError,
    DegeneratePosteriorError,
    ValueError,
)


class _CaptureModel:
    """Wraps a backend and keeps every evaluated velocity in call order."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = []

    @property
    def shape(self):
        return self.inner.shape

    def evaluate(self, x, t, condition):
        out = self.inner.evaluate(x, t, condition)
        self.calls.append((t, condition, out))
        return out


def _backend(config: RunConfigModel):
    if config.backend.kind == "analytic":
        return build_testbed(config.backend.testbed.to_core())
    return load_manifest(config.backend.manifest)


def _run_seed(model, config: RunConfigModel, seed: int, record_tensors: bool, keep_images: bool):
    backend = _CaptureModel(model) if record_tensors else model
    trajectory = run(
        backend,
        config.guidance.to_core(),
        config.steps,
        seed,
        condition=config.backend.condition,
        snapshots=config.snapshots,
    )
    rep = report(trajectory, config.model_dump())
    image_b64 = None
    if keep_images and trajectory.final.channels == 3:
        image_b64 = b64_of(ppm_bytes(to_image(trajectory.final)))
    tensors = None
    if record_tensors:
        tensors = []
        calls = backend.calls
        for i in range(0, len(calls), 2):
            (t, _, v_uc), (_, _, v_c) = calls[i], calls[i + 1]
            tensors.append(
                StepTensors(
                    t=t,
                    v_uc_npy_b64=b64_of(npy_bytes(v_uc.data)),
                    v_c_npy_b64=b64_of(npy_bytes(v_c.data)),
                )
            )
    return rep, RunResult(
        seed=seed,
        saturation=rep.saturation,
        clipped_fraction=rep.clipped_fraction,
        image_ppm_b64=image_b64,
        trajectory_csv=report_csv(rep),
        tensors=tensors,
    )


def _run_all_seeds(config: RunConfigModel, record_tensors: bool = False, keep_images: bool = True):
    model = _backend(config)
    seeds = list(config.seeds)
    if config.jobs > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(
                pool.map(lambda s: _run_seed(model, config, s, record_tensors, keep_images), seeds)
            )
    else:
        results = [_run_seed(model, config, s, record_tensors, keep_images) for s in seeds]
    reports = [r[0] for r in results]
    runs = [r[1] for r in results]
    return reports, runs


def _mean_std(values):
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def create_app() -> FastAPI:
    app = FastAPI(title="lfcfg guidance lab", version=__version__)

    def guard(fn, *args):
        try:
            return fn(*args)
        except _CLIENT_FAULTS as exc:
            raise HTTPException(
                status_code=422, detail={"error": type(exc).__name__, "message": str(exc)}
            ) from exc
        except SamplingError as exc:
            raise HTTPException(
                status_code=500, detail={"error": "SamplingError", "message": str(exc)}
            ) from exc

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/sample", response_model=SampleResponse)
    def sample(request: SampleRequest) -> SampleResponse:
        def work():
            reports, runs = _run_all_seeds(
                request.config, request.record_tensors, request.keep_images
            )
            return SampleResponse(runs=runs, summary_csv=summary_csv(reports))

        return guard(work)

    @app.post("/ablate", response_model=AblateResponse)
    def ablate(request: AblateRequest) -> AblateResponse:
        def work():
            cells = []
            out = io.StringIO()
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(
                ["axis", "value", "saturation_mean", "saturation_std", "clipped_mean", "clipped_std", "seeds"]
            )
            for value in request.values:
                doc = request.config.model_dump()
                if request.axis == "w":
                    doc["guidance"]["w"] = value
                elif request.axis == "k":
                    doc["guidance"]["threshold"]["k"] = value
                elif request.axis == "s":
                    doc["guidance"]["filter_scale"] = int(value)
                else:
                    doc["guidance"]["combination"] = int(value)
                cell_config = RunConfigModel(**doc)
                reports, _ = _run_all_seeds(cell_config, keep_images=False)
                sat_mean, sat_std = _mean_std([r.saturation for r in reports if r.saturation is not None])
                clip_mean, clip_std = _mean_std([r.clipped_fraction for r in reports])
                cells.append(
                    AblateCell(
                        value=value,
                        saturation_mean=sat_mean,
                        saturation_std=sat_std,
                        clipped_mean=clip_mean,
                        clipped_std=clip_std,
                    )
                )
                writer.writerow(
                    [
                        request.axis,
                        repr(float(value)),
                        "" if sat_mean is None else repr(sat_mean),
                        "" if sat_std is None else repr(sat_std),
                        repr(clip_mean),
                        repr(clip_std),
                        len(request.config.seeds),
                    ]
                )
            return AblateResponse(axis=request.axis, cells=cells, summary_csv=out.getvalue())

        return guard(work)

    @app.post("/diagnose", response_model=DiagnoseResponse)
    def diagnose(request: DiagnoseRequest) -> DiagnoseResponse:
        def work():
            rows = []
            images = {}
            out = io.StringIO()
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(["mode", "saturation_mean", "clipped_mean", "seeds"])
            for mode in request.modes:
                if mode not in MODES:
                    raise ConfigError(f"unknown mode {mode!r}; choose from {MODES}")
                doc = request.config.model_dump()
                doc["guidance"]["mode"] = mode
                mode_config = RunConfigModel(**doc)
                reports, runs = _run_all_seeds(mode_config)
                sat_mean, _ = _mean_std([r.saturation for r in reports if r.saturation is not None])
                clip_mean, _ = _mean_std([r.clipped_fraction for r in reports])
                rows.append(DiagnoseRow(mode=mode, saturation_mean=sat_mean, clipped_mean=clip_mean))
                if runs and runs[0].image_ppm_b64:
                    images[mode] = runs[0].image_ppm_b64
                writer.writerow(
                    [
                        mode,
                        "" if sat_mean is None else repr(sat_mean),
                        repr(clip_mean),
                        len(request.config.seeds),
                    ]
                )
            return DiagnoseResponse(rows=rows, metrics_csv=out.getvalue(), images_ppm_b64=images)

        return guard(work)

    @app.post("/region-maps", response_model=RegionMapsResponse)
    def region_maps(request: RegionMapsRequest) -> RegionMapsResponse:
        def work():
            config = request.config
            if request.step >= config.steps:
                raise ConfigError(
                    f"step must be < steps ({config.steps}), got {request.step}"
                )
            capture = _CaptureModel(_backend(config))
            run(
                capture,
                config.guidance.to_core(),
                config.steps,
                config.seeds[0],
                condition=config.backend.condition,
            )
            (_, _, prev_uc), (_, _, prev_c) = capture.calls[2 * request.step - 2 : 2 * request.step]
            (t, _, v_uc), (_, _, v_c) = capture.calls[2 * request.step : 2 * request.step + 2]
            core = config.guidance.to_core()
            scale, kernel, k = core.filter_scale, core.upsample, core.policy.k
            r_uc = change_map(
                split(prev_uc, scale, kernel).low, split(v_uc, scale, kernel).low
            )
            r_c = change_map(split(prev_c, scale, kernel).low, split(v_c, scale, kernel).low)
            gamma_uc, gamma_c = threshold(r_uc, k), threshold(r_c, k)
            m_uc = low_change_mask(r_uc, gamma_uc)
            m_c = low_change_mask(r_c, gamma_c)
            return RegionMapsResponse(
                step=request.step,
                t=t,
                gamma_uc=gamma_uc,
                gamma_c=gamma_c,
                mask_fraction_uc=mask_fraction(m_uc),
                mask_fraction_c=mask_fraction(m_c),
                change_uc_ppm_b64=b64_of(ppm_bytes(heatmap(r_uc))),
                change_c_ppm_b64=b64_of(ppm_bytes(heatmap(r_c))),
                mask_uc_ppm_b64=b64_of(ppm_bytes(heatmap(m_uc, lo=0.0, hi=1.0))),
                mask_c_ppm_b64=b64_of(ppm_bytes(heatmap(m_c, lo=0.0, hi=1.0))),
            )

        return guard(work)

    @app.post("/replay", response_model=ReplayResponse)
    def replay(request: ReplayRequest) -> ReplayResponse:
        def work():
            model = load_manifest(request.manifest)
            composed = compose_replay(model, request.guidance.to_core())
            steps = []
            out = io.StringIO()
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow(["index", "t", "mask_fraction_uc", "mask_fraction_c", "rho", "velocity_norm"])
            for index, t, velocity, diag in composed:
                steps.append(
                    ReplayStepResult(
                        index=index,
                        t=t,
                        composed_npy_b64=b64_of(npy_bytes(velocity.data, request.emit_dtype)),
                        mask_fraction_uc=diag.mask_fraction_uc,
                        mask_fraction_c=diag.mask_fraction_c,
                        rho=diag.rho,
                        velocity_norm=float(np.linalg.norm(velocity.data)),
                    )
                )
                writer.writerow(
                    [
                        index,
                        repr(t),
                        repr(diag.mask_fraction_uc),
                        repr(diag.mask_fraction_c),
                        repr(diag.rho),
                        repr(float(np.linalg.norm(velocity.data))),
                    ]
                )
            return ReplayResponse(steps=steps, metrics_csv=out.getvalue())

        return guard(work)

    return app


app = create_app()
