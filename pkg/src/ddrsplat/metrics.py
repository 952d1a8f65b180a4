"""Evaluation metrics and the held-out split report.

HDR scores follow the tone-mapped protocol: min-max normalize, mu-law
compress, then PSNR/SSIM, which makes them invariant to positive rescaling
of either raster.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .losses import minmax_normalize, mu_law
from .losses import ssim as _ssim
from .rasterizer import rasterize_dual
from .sceneio import DatasetManifest
from .scene import DdrScene

GROUP_LDR_OE = "ldr_oe"
GROUP_LDR_NE = "ldr_ne"
GROUP_HDR = "hdr"


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    return _ssim(a, b)


def evaluate_hdr(rendered_hdr, target_hdr, mu: float = 5000.0) -> dict:
    ra = mu_law(minmax_normalize(np.asarray(rendered_hdr, dtype=np.float64)), mu)
    rb = mu_law(minmax_normalize(np.asarray(target_hdr, dtype=np.float64)), mu)
    return {"psnr": psnr(ra, rb), "ssim": ssim(ra, rb)}


def _mean(vals: list[float]) -> float | None:
    if not vals:
        return None
    if any(math.isinf(v) for v in vals):
        return math.inf
    return float(np.mean(vals))


def evaluate_split(
    scene: DdrScene,
    manifest: DatasetManifest,
    split: str = "test",
    *,
    mu: float = 5000.0,
    tile_size: int = 16,
) -> dict:
    """Per-group metric means over one split.

    LDR views are grouped by whether their exposure is a training exposure
    (LDR-OE) or a novel one (LDR-NE); HDR targets are scored once per
    distinct target raster.
    """
    train_levels = set(manifest.train_exposure_levels)
    scores: dict[str, dict[str, list[float]]] = {
        GROUP_LDR_OE: {"psnr": [], "ssim": []},
        GROUP_LDR_NE: {"psnr": [], "ssim": []},
        GROUP_HDR: {"psnr": [], "ssim": []},
    }
    seen_hdr: set[str] = set()
    for i in manifest.view_indices(split):
        view = manifest.views[i]
        cam = manifest.camera(i)
        img_hdr, img_ldr = rasterize_dual(scene, cam, view.exposure_time, tile_size=tile_size)
        target_ldr = manifest.image(i)
        group = GROUP_LDR_OE if view.exposure_time in train_levels else GROUP_LDR_NE
        scores[group]["psnr"].append(psnr(img_ldr.pixels, target_ldr))
        scores[group]["ssim"].append(ssim(img_ldr.pixels, target_ldr))
        if view.hdr_path is not None and view.hdr_path not in seen_hdr:
            seen_hdr.add(view.hdr_path)
            res = evaluate_hdr(img_hdr.pixels, manifest.hdr_target(i), mu)
            scores[GROUP_HDR]["psnr"].append(res["psnr"])
            scores[GROUP_HDR]["ssim"].append(res["ssim"])
    return {
        "split": split,
        "groups": {
            g: {
                "n_views": len(s["psnr"]),
                "psnr_mean": _mean(s["psnr"]),
                "ssim_mean": _mean(s["ssim"]),
            }
            for g, s in scores.items()
        },
    }


def report_to_json(report: dict) -> str:
    def enc(v):
        if isinstance(v, float) and math.isinf(v):
            return None
        return v

    doc = {
        "split": report["split"],
        "groups": {
            g: {k: enc(v) for k, v in stats.items()} for g, stats in report["groups"].items()
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def format_report_table(report: dict) -> str:
    names = {GROUP_LDR_OE: "LDR-OE", GROUP_LDR_NE: "LDR-NE", GROUP_HDR: "HDR"}

    def fmt(v):
        if v is None:
            return "---"
        if isinstance(v, float) and math.isinf(v):
            return "inf"
        return f"{v:.3f}"

    lines = [f"split: {report['split']}", f"{'group':8s} {'views':>5s} {'PSNR':>8s} {'SSIM':>8s}"]
    for g in (GROUP_LDR_OE, GROUP_LDR_NE, GROUP_HDR):
        s = report["groups"][g]
        lines.append(
            f"{names[g]:8s} {s['n_views']:5d} {fmt(s['psnr_mean']):>8s} {fmt(s['ssim_mean']):>8s}"
        )
    return "\n".join(lines)
