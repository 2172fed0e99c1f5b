"""Command-line entry point: a thin client for the guidance-lab service.

Every run subcommand builds a validated request, sends it to the service
(in-process ASGI by default, or a remote base URL via --server), and writes
the returned artifacts to disk atomically. All outputs are byte-reproducible
given (config, seeds); the LFCFG_SEED_BASE environment variable offsets every
seed before submission.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import httpx
from pydantic import ValidationError

from .errors import ConfigError
from .npyio import npy_bytes, parse_npy, write_bytes_atomic
from .schemas import (
    AblateRequest,
    DiagnoseRequest,
    ReplayRequest,
    RunConfigModel,
    SampleRequest,
    bytes_of,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def _load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            if path.endswith(".toml"):
                return tomllib.load(fh)
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path!r}: {exc}") from exc


def _parse_seeds(text: str) -> list:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad seed list {text!r}") from exc


def _apply_overrides(doc: dict, args: argparse.Namespace) -> dict:
    guidance = doc.setdefault("guidance", {})
    threshold = guidance.setdefault("threshold", {})
    backend = doc.setdefault("backend", {})
    if args.w is not None:
        guidance["w"] = args.w
    if args.mode is not None:
        guidance["mode"] = args.mode
    if args.scale is not None:
        guidance["filter_scale"] = args.scale
    if args.combination is not None:
        guidance["combination"] = args.combination
    if args.k is not None:
        threshold["k"] = args.k
    if args.rho_mode is not None:
        threshold["rho_mode"] = args.rho_mode
    if args.rho is not None:
        threshold["rho_manual"] = args.rho
        threshold.setdefault("rho_mode", "manual")
    if args.steps is not None:
        doc["steps"] = args.steps
    if args.seeds is not None:
        doc["seeds"] = _parse_seeds(args.seeds)
    if args.condition is not None:
        backend["condition"] = args.condition
    if args.manifest is not None:
        backend["kind"] = "replay"
        backend["manifest"] = args.manifest
    if args.jobs is not None:
        doc["jobs"] = args.jobs
    return doc


def _build_config(args: argparse.Namespace) -> RunConfigModel:
    doc = _load_config(args.config) if args.config else {}
    doc = _apply_overrides(doc, args)
    if not doc.get("seeds"):
        raise ConfigError("config must provide a non-empty seeds list")
    base = int(os.environ.get("LFCFG_SEED_BASE", "0"))
    doc["seeds"] = [s + base for s in doc["seeds"]]
    return RunConfigModel(**doc)


def _post(server: str | None, path: str, payload: dict) -> dict:
    """Send one request, over HTTP when a server is given, in-process otherwise."""
    if server:
        with httpx.Client(base_url=server, timeout=600.0) as client:
            response = client.post(path, json=payload)
    else:
        import asyncio

        from .server import app

        async def call():
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://lfcfg.local", timeout=600.0
            ) as client:
                return await client.post(path, json=payload)

        response = asyncio.run(call())
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", {})
        except Exception:
            detail = {}
        kind = detail.get("error", f"http-{response.status_code}")
        message = detail.get("message", response.text[:200])
        code = 2 if response.status_code == 422 else 1
        _fail(kind, message, code)
    return response.json()


def _fail(kind: str, message: str, code: int):
    print(f"lfcfg-error kind={kind} message={message}", file=sys.stderr)
    raise SystemExit(code)


def _write_text(path: str, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def _write_session(out_dir: str, run: dict, dtype: str, source: str) -> None:
    from .models import write_manifest

    steps = []
    shape = None
    for i, step in enumerate(run["tensors"]):
        uc = parse_npy(bytes_of(step["v_uc_npy_b64"]))
        c = parse_npy(bytes_of(step["v_c_npy_b64"]))
        shape = uc.shape
        uc_name, c_name = f"v_uc_{i:03d}.npy", f"v_c_{i:03d}.npy"
        write_bytes_atomic(os.path.join(out_dir, uc_name), npy_bytes(uc, dtype))
        write_bytes_atomic(os.path.join(out_dir, c_name), npy_bytes(c, dtype))
        steps.append({"t": step["t"], "v_uc": uc_name, "v_c": c_name})
    write_manifest(os.path.join(out_dir, "manifest.json"), dtype, shape, steps, source)


def _resolve_out(args: argparse.Namespace, config=None) -> str:
    configured = config.out if config is not None else None
    return args.out or configured or "out"


def cmd_sample(args: argparse.Namespace) -> int:
    config = _build_config(args)
    out_dir = _resolve_out(args, config)
    request = SampleRequest(config=config, record_tensors=args.record, keep_images=True)
    data = _post(args.server, "/sample", request.model_dump())
    os.makedirs(out_dir, exist_ok=True)
    for run in data["runs"]:
        seed = run["seed"]
        _write_text(os.path.join(out_dir, f"trajectory_{seed:04d}.csv"), run["trajectory_csv"])
        if run["image_ppm_b64"]:
            write_bytes_atomic(
                os.path.join(out_dir, f"final_{seed:04d}.ppm"), bytes_of(run["image_ppm_b64"])
            )
        if args.record and run.get("tensors"):
            source = (
                f"lfcfg sample backend={config.backend.kind} seed={seed} "
                f"w={config.guidance.w} mode={config.guidance.mode} (flow velocity fields)"
            )
            _write_session(
                os.path.join(out_dir, f"session_{seed:04d}"), run, args.record_dtype, source
            )
    _write_text(os.path.join(out_dir, "summary.csv"), data["summary_csv"])
    print(f"wrote {len(data['runs'])} run(s) to {out_dir}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _build_config(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {args.values!r}") from exc
    if not values:
        raise ConfigError("sweep needs at least one value")
    request = AblateRequest(config=config, axis=args.axis, values=values)
    data = _post(args.server, "/ablate", request.model_dump())
    out_dir = _resolve_out(args, config)
    os.makedirs(out_dir, exist_ok=True)
    _write_text(os.path.join(out_dir, "ablate.csv"), data["summary_csv"])
    for cell in data["cells"]:
        print(
            f"{args.axis}={cell['value']:g} saturation={cell['saturation_mean']} "
            f"clipped={cell['clipped_mean']}"
        )
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    config = _build_config(args)
    modes = [m for m in args.modes.split(",") if m.strip() != ""]
    request = DiagnoseRequest(config=config, modes=modes)
    data = _post(args.server, "/diagnose", request.model_dump())
    out_dir = _resolve_out(args, config)
    os.makedirs(out_dir, exist_ok=True)
    _write_text(os.path.join(out_dir, "diagnose.csv"), data["metrics_csv"])
    for mode, ppm in data["images_ppm_b64"].items():
        write_bytes_atomic(os.path.join(out_dir, f"diag_{mode}.ppm"), bytes_of(ppm))
    if args.heatmap_step is not None:
        for mode in modes:
            doc = config.model_dump()
            doc["guidance"]["mode"] = mode
            maps = _post(
                args.server,
                "/region-maps",
                {"config": doc, "step": args.heatmap_step},
            )
            for key in ("change_uc", "change_c", "mask_uc", "mask_c"):
                write_bytes_atomic(
                    os.path.join(out_dir, f"heatmap_{mode}_{key}.ppm"),
                    bytes_of(maps[f"{key}_ppm_b64"]),
                )
    for row in data["rows"]:
        print(f"{row['mode']}: saturation={row['saturation_mean']} clipped={row['clipped_mean']}")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    if not args.manifest:
        raise ConfigError("replay requires --manifest")
    doc = _load_config(args.config) if args.config else {}
    # only the guidance section matters here; route overrides through the shared plumbing
    shim = argparse.Namespace(**{**vars(args), "manifest": None, "seeds": None, "condition": None})
    doc = _apply_overrides(doc, shim)
    doc["seeds"] = [0]
    doc.pop("backend", None)
    request = ReplayRequest(
        manifest=os.path.abspath(args.manifest),
        guidance=RunConfigModel(**doc).guidance,
        emit_dtype=args.emit_dtype,
    )
    data = _post(args.server, "/replay", request.model_dump())
    out_dir = args.out or "out"
    os.makedirs(out_dir, exist_ok=True)
    for step in data["steps"]:
        write_bytes_atomic(
            os.path.join(out_dir, f"composed_{step['index']:03d}.npy"),
            bytes_of(step["composed_npy_b64"]),
        )
    _write_text(os.path.join(out_dir, "replay_metrics.csv"), data["metrics_csv"])
    print(f"composed {len(data['steps'])} step(s) into {out_dir}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    rows = []
    for name in sorted(os.listdir(args.runs)):
        if not (name.startswith("trajectory_") and name.endswith(".csv")):
            continue
        with open(os.path.join(args.runs, name), "r", encoding="utf-8") as fh:
            for record in csv.DictReader(fh):
                if record["row"] == "summary":
                    rows.append(
                        {
                            "run": name,
                            "saturation": record["saturation"],
                            "clipped_fraction": record["clipped_fraction"],
                        }
                    )
    if not rows:
        _fail("ConfigError", f"no trajectory CSVs found under {args.runs!r}", 2)
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=["run", "saturation", "clipped_fraction"], lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        _write_text(args.out, out.getvalue())
    print(out.getvalue(), end="")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("lfcfg.server:app", host=args.host, port=args.port, log_level="info")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON or TOML run config")
    parser.add_argument("--server", help="remote service base URL (default: in-process)")
    parser.add_argument("--out", help="output directory (flag > config 'out' key > ./out)")
    parser.add_argument("--jobs", type=int, help="worker bound for seed fan-out")
    parser.add_argument("--w", type=float, help="guidance scale override")
    parser.add_argument("--mode", help="guidance mode override")
    parser.add_argument("--scale", type=int, help="filter scale override (1/2/4/8)")
    parser.add_argument("--combination", type=int, help="combination variant override (1-4)")
    parser.add_argument("--k", type=float, help="threshold multiplier override")
    parser.add_argument("--rho-mode", dest="rho_mode", help="paper-fixed | empirical | manual")
    parser.add_argument("--rho", type=float, help="manual down-weight ratio")
    parser.add_argument("--steps", type=int, help="step count override")
    parser.add_argument("--seeds", help="comma-separated seed list override")
    parser.add_argument("--condition", type=int, help="conditioned class override")
    parser.add_argument("--manifest", help="replay manifest path (switches backend to replay)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lfcfg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="run seeded trajectories and write images + CSVs")
    _add_common(p)
    p.add_argument("--record", action="store_true", help="also export a replayable session per seed")
    p.add_argument("--record-dtype", default="float32", choices=["float32", "float64"])
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("ablate", help="sweep one axis and write a comparison CSV")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=["w", "k", "s", "combination"])
    p.add_argument("--values", required=True, help="comma-separated sweep values")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("diagnose", help="run zeroing probes side by side")
    _add_common(p)
    p.add_argument(
        "--modes",
        default="cfg,diag-zero-high,diag-zero-low-change,diag-zero-high-change",
        help="comma-separated mode list",
    )
    p.add_argument(
        "--heatmap-step",
        dest="heatmap_step",
        type=int,
        help="also emit change-map and mask heatmaps captured at this step (>=1)",
    )
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("replay", help="recompose velocities from a recorded session")
    _add_common(p)
    p.add_argument("--emit-dtype", default="float32", choices=["float32", "float64"])
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("report", help="aggregate trajectory CSVs already on disk")
    p.add_argument("--runs", required=True, help="directory containing trajectory_*.csv")
    p.add_argument("--out", help="optional combined CSV path")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8040)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except (ConfigError, ValidationError) as exc:
        _fail(type(exc).__name__, str(exc).replace("\n", " | "), 2)
    except httpx.HTTPError as exc:
        _fail(type(exc).__name__, str(exc), 1)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
