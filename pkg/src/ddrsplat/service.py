"""HTTP render service: a loaded scene served read-only to programmatic
clients and the browser viewer.

POST /api/render returns PNG bytes; "hdr_preview" applies the mu-law display
transform before quantization since browsers cannot show linear float images.
"""

from __future__ import annotations

import os
import threading

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, Field

from .images import encode_png
from .losses import minmax_normalize, mu_law
from .rasterizer import rasterize_dual
from .scene import Camera, DdrScene, SceneError

MAX_RENDER_DIM = 1024


class RenderRequest(BaseModel):
    extrinsics: list[float] = Field(..., min_length=16, max_length=16)
    exposure_time: float = 1.0
    mode: str = "ldr"
    width: int | None = None
    height: int | None = None


def create_app(
    scene: DdrScene,
    meta: dict | None,
    *,
    static_dir: str | None = None,
    max_concurrent_renders: int | None = None,
) -> FastAPI:
    meta = meta or {}
    app = FastAPI(title="ddrsplat render service")
    if max_concurrent_renders is None:
        max_concurrent_renders = max(1, (os.cpu_count() or 2) // 2)
    render_gate = threading.Semaphore(max_concurrent_renders)

    base_w = int(meta.get("width", 64))
    base_h = int(meta.get("height", 64))
    base_intr = np.array(
        meta.get("intrinsics", [[base_w, 0, base_w / 2, 0], [0, base_w, base_h / 2, 0], [0, 0, 1, 0]]),
        dtype=np.float64,
    )
    exposure_range = meta.get("exposure_range") or [0.01, 100.0]
    mu = float(meta.get("mu_compression", 5000.0))

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/api/meta")
    def api_meta():
        return {
            "image_size": [base_w, base_h],
            "exposure_range": {"min": exposure_range[0], "max": exposure_range[1]},
            "n_gaussians": scene.n_gaussians,
            "camera_presets": meta.get("camera_presets", []),
        }

    @app.post("/api/render")
    def api_render(req: RenderRequest):
        if not (req.exposure_time > 0 and np.isfinite(req.exposure_time)):
            return JSONResponse(
                status_code=400,
                content={"detail": [{"loc": ["body", "exposure_time"], "msg": "must be > 0"}]},
            )
        if req.mode not in ("ldr", "hdr_preview"):
            return JSONResponse(
                status_code=400,
                content={"detail": [{"loc": ["body", "mode"], "msg": "must be 'ldr' or 'hdr_preview'"}]},
            )
        width = req.width or base_w
        height = req.height or base_h
        if not (1 <= width <= MAX_RENDER_DIM and 1 <= height <= MAX_RENDER_DIM):
            return JSONResponse(
                status_code=400,
                content={
                    "detail": [
                        {"loc": ["body", "width"], "msg": f"dimensions must be in [1, {MAX_RENDER_DIM}]"}
                    ]
                },
            )
        try:
            ext = np.array(req.extrinsics, dtype=np.float64).reshape(4, 4)
            intr = base_intr.copy()
            intr[0, :] *= width / base_w
            intr[1, :] *= height / base_h
            cam = Camera(ext, intr, width, height, req.exposure_time)
        except SceneError as e:
            return JSONResponse(
                status_code=400,
                content={"detail": [{"loc": ["body", "extrinsics"], "msg": str(e)}]},
            )
        try:
            with render_gate:
                img_hdr, img_ldr = rasterize_dual(scene, cam, req.exposure_time)
            if req.mode == "ldr":
                raster = img_ldr.pixels
            else:
                raster = mu_law(minmax_normalize(img_hdr.pixels), mu)
            png = encode_png(raster)
        except Exception as e:  # render failures are server errors
            return JSONResponse(status_code=500, content={"detail": str(e)})
        return Response(content=png, media_type="image/png")

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="viewer")
    return app
