"""Command-line entry points: train, render, eval, serve, fixture."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .images import write_png, write_pfm
from .losses import minmax_normalize, mu_law
from .rasterizer import rasterize_dual
from .scene import Camera, SceneError
from .sceneio import (
    FixtureSpec,
    SceneIoError,
    checkpoint_load,
    checkpoint_save,
    generate_fixture,
    load_manifest,
)
from .trainer import TrainConfig, TrainerError, checkpoint_meta, train

log = logging.getLogger("ddrsplat")

_FLAG_ALIASES = {"iterations": ["--iters"], "gamma_hdr": ["--gamma"]}


def _add_train_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        names = [flag] + _FLAG_ALIASES.get(f.name, [])
        typ = {int: int, float: float, str: str}.get(f.type if isinstance(f.type, type) else None)
        if typ is None:
            # string annotations like "float | None" -> float, "str" -> str
            typ = str if "str" in str(f.type) else (int if str(f.type) == "int" else float)
        parser.add_argument(*names, dest=f.name, type=typ, default=None, help=f"TrainConfig.{f.name}")


def _build_train_config(args) -> TrainConfig:
    overrides = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        unknown = set(doc) - {f.name for f in fields(TrainConfig)}
        if unknown:
            raise SceneIoError(f"unknown TrainConfig keys in {args.config}: {sorted(unknown)}")
        overrides.update(doc)
    for f in fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = v
    return TrainConfig(**overrides)


def cmd_train(args) -> int:
    manifest = load_manifest(args.data)
    cfg = _build_train_config(args)
    log_path = Path(args.metrics_log) if args.metrics_log else Path(str(args.out) + ".metrics.ndjson")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w") as fh:

        def sink(record):
            fh.write(json.dumps(record, sort_keys=True) + "\n")

        result = train(manifest, cfg, log_sink=sink)
    checkpoint_save(result.scene, args.out, meta=checkpoint_meta(manifest, cfg))
    final = next((r for r in reversed(result.records) if r.get("psnr_ldr") is not None), None)
    if final:
        log.info(
            "trained %d iters: psnr_ldr=%.2f psnr_hdr=%s n_gaussians=%d",
            cfg.iterations,
            final["psnr_ldr"],
            f"{final['psnr_hdr']:.2f}" if final.get("psnr_hdr") is not None else "n/a",
            final["n_gaussians"],
        )
    print(f"checkpoint written to {args.out}")
    return 0


def _camera_from_args(args, meta, scene) -> Camera:
    width = args.width or (meta or {}).get("width")
    height = args.height or (meta or {}).get("height")
    exposure = args.exposure if args.exposure is not None else 1.0
    if str(args.camera).lstrip("-").isdigit():
        presets = (meta or {}).get("camera_presets") or []
        idx = int(args.camera)
        if not presets:
            raise SceneIoError("checkpoint has no camera presets; pass a camera JSON file")
        if not 0 <= idx < len(presets):
            raise SceneIoError(f"camera preset index {idx} out of range (0..{len(presets)-1})")
        preset = presets[idx]
        ext = np.array(preset["extrinsics"], dtype=np.float64).reshape(4, 4)
    else:
        doc = json.loads(Path(args.camera).read_text())
        ext = np.array(doc["extrinsics"], dtype=np.float64).reshape(4, 4)
        width = doc.get("width", width)
        height = doc.get("height", height)
    if width is None or height is None:
        raise SceneIoError("image size unknown: pass --width/--height or use a checkpoint with meta")
    intr = np.array((meta or {}).get("intrinsics"), dtype=np.float64)
    base_w = (meta or {}).get("width", width)
    base_h = (meta or {}).get("height", height)
    intr = intr.copy()
    intr[0, :] *= width / base_w
    intr[1, :] *= height / base_h
    return Camera(ext, intr, int(width), int(height), exposure)


def cmd_render(args) -> int:
    if args.mode in ("ldr", "both"):
        if args.exposure is None:
            raise UsageError("--exposure is required for LDR rendering")
        if args.exposure <= 0:
            raise UsageError("--exposure must be > 0")
    scene, meta = checkpoint_load(args.ckpt)
    cam = _camera_from_args(args, meta, scene)
    img_hdr, img_ldr = rasterize_dual(scene, cam, cam.exposure_time)
    out = Path(args.out)
    base = out.with_suffix("") if out.suffix in (".png", ".pfm") else out
    wrote = []
    if args.mode in ("hdr", "both"):
        p = base.with_suffix(".pfm")
        write_pfm(img_hdr.pixels.astype(np.float32), p)
        wrote.append(str(p))
    if args.mode in ("ldr", "both"):
        p = base.with_suffix(".png")
        write_png(img_ldr.pixels, p)
        wrote.append(str(p))
    print("wrote " + ", ".join(wrote))
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate_split, format_report_table, report_to_json

    scene, _ = checkpoint_load(args.ckpt)
    manifest = load_manifest(args.data)
    report = evaluate_split(scene, manifest, args.split)
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(report_to_json(report))
    print(format_report_table(report))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    scene, meta = checkpoint_load(args.ckpt)
    app = create_app(scene, meta, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_fixture(args) -> int:
    spec = FixtureSpec(
        n_gaussians=args.n_gaussians,
        image_size=args.image_size,
        n_train_views=args.n_train,
        n_test_views=args.n_test,
        exposure_levels=tuple(float(t) for t in args.exposures.split(",")),
        train_exposure_indices=tuple(int(i) for i in args.train_exposure_indices.split(",")),
        seed=args.seed,
    )
    manifest = generate_fixture(spec, args.out)
    print(f"fixture with {len(manifest.views)} views written to {args.out}")
    return 0


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddrsplat",
        description="Dual dynamic range Gaussian splatting: train, render, evaluate, serve.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a scene from a dataset")
    p.add_argument("--data", required=True, help="dataset directory or manifest path")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--config", help="JSON file with TrainConfig overrides (flags win)")
    p.add_argument("--metrics-log", help="metrics NDJSON path (default: <out>.metrics.ndjson)")
    _add_train_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a view from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--camera", required=True, help="preset index or JSON file with extrinsics")
    p.add_argument("--exposure", type=float, help="exposure time in seconds (LDR modes)")
    p.add_argument("--mode", choices=("hdr", "ldr", "both"), default="both")
    p.add_argument("--out", required=True, help="output path base (.pfm/.png appended by mode)")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve a trained scene over HTTP")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static", help="directory of viewer assets to serve at /")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("fixture", help="generate a synthetic multi-exposure dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-gaussians", type=int, default=200)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--n-train", type=int, default=20)
    p.add_argument("--n-test", type=int, default=10)
    p.add_argument("--exposures", default="0.125,0.5,2,8,32")
    p.add_argument("--train-exposure-indices", default="0,2,4")
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DDR_LOG", "INFO").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        parser.error(str(e))  # exits 2
        return 2
    except (SceneIoError, SceneError, TrainerError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
