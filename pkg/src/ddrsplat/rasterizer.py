"""Differentiable dual rasterization: one shared geometry pass projects the
3D Gaussians, bins them into tiles and depth-sorts; two blending passes then
composite the HDR and the LDR color of every point.

The backward pass returns exact analytic cotangents for every learnable
scene parameter, with both passes' contributions summed.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels, sh
from .scene import (
    Camera,
    DdrGaussian,
    DdrScene,
    GradientSet,
    build_covariances,
    quat_to_rotmat,
    quat_to_rotmat_jac,
    sigmoid,
)

DEFAULT_TILE_SIZE = 16
DEFAULT_NEAR_PLANE = 0.01
LOWPASS_FLOOR = 0.3  # px^2 added to the 2D covariance diagonal
BIN_RADIUS_SIGMA = 6.0  # matches the kernels' Mahalanobis cutoff (m > 36 skipped)


class RasterizeError(RuntimeError):
    pass


class DynamicRange(Enum):
    HDR = "hdr"
    LDR = "ldr"


@dataclass
class RenderedImage:
    pixels: np.ndarray  # (H, W, 3)
    range: DynamicRange
    exposure_time: float | None = None
    camera_id: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise RasterizeError(f"raster must be (H, W, 3), got {self.pixels.shape}")
        if self.range is DynamicRange.LDR and self.exposure_time is None:
            raise RasterizeError("LDR raster needs its exposure time")
        if self.range is DynamicRange.HDR and self.exposure_time is not None:
            raise RasterizeError("HDR raster carries no exposure time")

    def validate_range(self) -> None:
        if self.range is DynamicRange.HDR:
            if np.any(self.pixels < 0.0):
                raise RasterizeError("HDR raster contains negative values")
        else:
            if np.any(self.pixels < 0.0) or np.any(self.pixels > 1.0):
                raise RasterizeError("LDR raster leaves [0, 1]")


@dataclass
class ProjectedGaussian:
    pixel_center: np.ndarray  # (2,)
    cov2d: np.ndarray  # (2, 2), low-pass floored
    view_depth: float
    hdr_color: np.ndarray
    ldr_color: np.ndarray
    opacity: float
    source_index: int


def gaussian_density(x: np.ndarray, mu: np.ndarray, cov: np.ndarray) -> float:
    """exp(-(x-mu)^T cov^-1 (x-mu) / 2); 1 exactly at the center."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    try:
        sol = np.linalg.solve(np.asarray(cov, dtype=np.float64), d)
    except np.linalg.LinAlgError as e:
        raise RasterizeError(f"singular covariance in density evaluation: {e}") from e
    m = float(d @ sol)
    if not np.isfinite(m) or m < 0.0:
        raise RasterizeError(f"covariance is not positive definite (quadratic form {m})")
    return float(np.exp(-0.5 * m))


class _Projection:
    """Per-view geometry and color state shared by both blending passes."""

    __slots__ = (
        "camera", "exposure_time", "active_degree", "idx", "depth", "u", "v",
        "j2", "m2", "cov3", "rot", "a", "b", "c", "qa", "qb", "qc", "rx", "ry",
        "dirs", "inv_norm", "basis", "s_log", "c_h", "x_tm", "c_l", "alpha",
        "tile_size", "tiles_x", "tiles_y", "pair_gid", "tile_start",
    )


def _project(
    scene: DdrScene,
    camera: Camera,
    exposure_time: float,
    active_sh_degree: int | None,
    near: float,
) -> _Projection:
    if not (exposure_time > 0.0 and np.isfinite(exposure_time)):
        raise RasterizeError(f"exposure_time must be positive and finite, got {exposure_time}")
    degree = scene.sh_degree if active_sh_degree is None else min(active_sh_degree, scene.sh_degree)
    p = _Projection()
    p.camera = camera
    p.exposure_time = float(exposure_time)
    p.active_degree = degree

    rw = camera.rotation
    tw = camera.translation
    v = scene.positions @ rw.T + tw
    depth = v[:, 2]
    keep = depth > near

    fx, fy, cx, cy = camera.fx, camera.fy, camera.cx, camera.cy
    w, h = camera.width, camera.height

    # projected centers (continuous pixel coords; pixel (i, j) center = (j+.5, i+.5))
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_z = np.where(keep, 1.0 / depth, 0.0)
    ux = fx * v[:, 0] * inv_z + cx
    uy = fy * v[:, 1] * inv_z + cy

    # EWA transform of the 3D covariance into pixel space
    cov3 = build_covariances(scene.rotations, scene.log_scales)
    j2 = np.zeros((scene.n_gaussians, 2, 3), dtype=np.float64)
    j2[:, 0, 0] = fx * inv_z
    j2[:, 1, 1] = fy * inv_z
    j2[:, 0, 2] = -fx * v[:, 0] * inv_z * inv_z
    j2[:, 1, 2] = -fy * v[:, 1] * inv_z * inv_z
    m2 = j2 @ rw  # (N, 2, 3)
    cov2 = np.einsum("nij,njk,nlk->nil", m2, cov3, m2, optimize=True)
    a = cov2[:, 0, 0] + LOWPASS_FLOOR
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1] + LOWPASS_FLOOR

    with np.errstate(invalid="ignore"):
        rx = BIN_RADIUS_SIGMA * np.sqrt(np.maximum(a, 0.0))
        ry = BIN_RADIUS_SIGMA * np.sqrt(np.maximum(c, 0.0))
    keep &= (ux + rx > 0.0) & (ux - rx < w) & (uy + ry > 0.0) & (uy - ry < h)

    idx = np.nonzero(keep)[0]
    p.idx = idx
    p.depth = depth[idx]
    p.v = v[idx]
    p.u = np.stack([ux[idx], uy[idx]], axis=1)
    p.j2 = j2[idx]
    p.m2 = m2[idx]
    p.cov3 = cov3[idx]
    p.rot = None  # built lazily in backward
    p.a, p.b, p.c = a[idx], b[idx], c[idx]
    det = p.a * p.c - p.b * p.b
    p.qa = p.c / det
    p.qb = -p.b / det
    p.qc = p.a / det
    p.rx, p.ry = rx[idx], ry[idx]

    # view-dependent colors
    raw = scene.positions[idx] - camera.position
    norm = np.linalg.norm(raw, axis=1)
    p.inv_norm = 1.0 / norm
    p.dirs = raw * p.inv_norm[:, None]
    nb = sh.n_coeffs(degree)
    p.basis = sh.sh_basis(p.dirs, degree)
    p.s_log = np.einsum("nb,nbc->nc", p.basis, scene.sh_coeffs[idx, :nb, :])
    p.c_h = np.exp(p.s_log)
    if scene.tone_mapper.domain == "log":
        p.x_tm = p.s_log + (np.log(exposure_time) + scene.sh_bias)
    else:
        p.x_tm = p.c_h * exposure_time
    p.c_l = scene.tone_mapper.forward_inputs(p.x_tm)
    p.alpha = sigmoid(scene.opacity_logits[idx])
    return p


def _bin_tiles(p: _Projection, tile_size: int) -> None:
    w, h = p.camera.width, p.camera.height
    p.tile_size = tile_size
    p.tiles_x = (w + tile_size - 1) // tile_size
    p.tiles_y = (h + tile_size - 1) // tile_size
    n_tiles = p.tiles_x * p.tiles_y
    nv = p.idx.shape[0]
    if nv == 0:
        p.pair_gid = np.zeros(0, dtype=np.int64)
        p.tile_start = np.zeros(n_tiles + 1, dtype=np.int64)
        return
    tx0 = np.clip(np.floor((p.u[:, 0] - p.rx) / tile_size).astype(np.int64), 0, p.tiles_x - 1)
    tx1 = np.clip(np.floor((p.u[:, 0] + p.rx) / tile_size).astype(np.int64), 0, p.tiles_x - 1)
    ty0 = np.clip(np.floor((p.u[:, 1] - p.ry) / tile_size).astype(np.int64), 0, p.tiles_y - 1)
    ty1 = np.clip(np.floor((p.u[:, 1] + p.ry) / tile_size).astype(np.int64), 0, p.tiles_y - 1)
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    counts = nx * ny
    total = int(counts.sum())
    gid = np.repeat(np.arange(nv, dtype=np.int64), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total, dtype=np.int64) - np.repeat(starts, counts)
    tx = tx0[gid] + local % nx[gid]
    ty = ty0[gid] + local // nx[gid]
    tile = ty * p.tiles_x + tx
    # sort: tile, then view depth, ties broken by original index
    order = np.lexsort((p.idx[gid], p.depth[gid], tile))
    p.pair_gid = np.ascontiguousarray(gid[order])
    tile_sorted = tile[order]
    p.tile_start = np.searchsorted(tile_sorted, np.arange(n_tiles + 1, dtype=np.int64))


def _blend_forward(p: _Projection, background: np.ndarray):
    w, h = p.camera.width, p.camera.height
    out_hdr = np.empty((h, w, 3), dtype=np.float64)
    out_ldr = np.empty((h, w, 3), dtype=np.float64)
    bg = np.ascontiguousarray(background, dtype=np.float64)
    _kernels.blend_forward(
        p.pair_gid,
        p.tile_start,
        np.ascontiguousarray(p.u[:, 0]),
        np.ascontiguousarray(p.u[:, 1]),
        p.qa,
        p.qb,
        p.qc,
        p.alpha,
        np.ascontiguousarray(p.c_h),
        np.ascontiguousarray(p.c_l),
        h,
        w,
        p.tile_size,
        p.tiles_x,
        bg,
        out_hdr,
        out_ldr,
    )
    return out_hdr, out_ldr


def rasterize_dual(
    scene: DdrScene,
    camera: Camera,
    exposure_time: float | None = None,
    *,
    tile_size: int = DEFAULT_TILE_SIZE,
    active_sh_degree: int | None = None,
    near: float = DEFAULT_NEAR_PLANE,
) -> tuple[RenderedImage, RenderedImage]:
    """Render the HDR view and the LDR view at the given exposure time."""
    dt = camera.exposure_time if exposure_time is None else float(exposure_time)
    p = _project(scene, camera, dt, active_sh_degree, near)
    _bin_tiles(p, tile_size)
    hdr, ldr = _blend_forward(p, scene.background_color)
    return (
        RenderedImage(hdr, DynamicRange.HDR, camera_id=camera.name),
        RenderedImage(ldr, DynamicRange.LDR, exposure_time=dt, camera_id=camera.name),
    )


def project_gaussian(
    g: DdrGaussian,
    camera: Camera,
    exposure_time: float,
    tone_mapper,
    *,
    sh_bias: float = 0.0,
    near: float = DEFAULT_NEAR_PLANE,
) -> ProjectedGaussian | None:
    """Project a single point; None when culled (behind the near plane or
    its 3-sigma footprint misses the image)."""
    one = DdrScene(
        g.position[None],
        g.rotation[None],
        g.log_scale[None],
        np.array([g.opacity_logit]),
        g.sh_coeffs[None],
        tone_mapper,
        sh_degree=g.sh_degree,
        sh_bias=sh_bias,
    )
    p = _project(one, camera, exposure_time, None, near)
    if p.idx.shape[0] == 0:
        return None
    cov2d = np.array([[p.a[0], p.b[0]], [p.b[0], p.c[0]]])
    return ProjectedGaussian(
        pixel_center=p.u[0].copy(),
        cov2d=cov2d,
        view_depth=float(p.depth[0]),
        hdr_color=p.c_h[0].copy(),
        ldr_color=p.c_l[0].copy(),
        opacity=float(p.alpha[0]),
        source_index=0,
    )


def _backward_from_projection(
    scene: DdrScene,
    p: _Projection,
    upstream_hdr: np.ndarray,
    upstream_ldr: np.ndarray,
    screen_grad_accum: np.ndarray | None = None,
    screen_grad_count: np.ndarray | None = None,
) -> GradientSet:
    grads = GradientSet.zeros_for(scene)
    nv = p.idx.shape[0]
    if nv == 0:
        return grads
    n_pairs = p.pair_gid.shape[0]
    g_u = np.zeros((n_pairs, 2))
    g_q = np.zeros((n_pairs, 3))
    g_alpha_pair = np.zeros(n_pairs)
    g_ch_pair = np.zeros((n_pairs, 3))
    g_cl_pair = np.zeros((n_pairs, 3))
    cam = p.camera
    _kernels.blend_backward(
        p.pair_gid,
        p.tile_start,
        np.ascontiguousarray(p.u[:, 0]),
        np.ascontiguousarray(p.u[:, 1]),
        p.qa,
        p.qb,
        p.qc,
        p.alpha,
        np.ascontiguousarray(p.c_h),
        np.ascontiguousarray(p.c_l),
        cam.height,
        cam.width,
        p.tile_size,
        p.tiles_x,
        np.ascontiguousarray(scene.background_color),
        np.ascontiguousarray(upstream_hdr, dtype=np.float64),
        np.ascontiguousarray(upstream_ldr, dtype=np.float64),
        g_u,
        g_q,
        g_alpha_pair,
        g_ch_pair,
        g_cl_pair,
    )

    def reduce_pairs(arr):
        if arr.ndim == 1:
            return np.bincount(p.pair_gid, weights=arr, minlength=nv)
        return np.stack(
            [np.bincount(p.pair_gid, weights=arr[:, k], minlength=nv) for k in range(arr.shape[1])],
            axis=1,
        )

    gu = reduce_pairs(g_u)  # dL/d pixel center
    gq3 = reduce_pairs(g_q)  # dL/d (qa, qb, qc)
    galpha = reduce_pairs(g_alpha_pair)
    gch = reduce_pairs(g_ch_pair)
    gcl = reduce_pairs(g_cl_pair)

    if screen_grad_accum is not None:
        # gradient norm in half-image-normalized coordinates (the units the
        # densification threshold is calibrated in)
        half = 0.5 * max(cam.width, cam.height)
        screen_grad_accum[p.idx] += np.hypot(gu[:, 0] * half, gu[:, 1] * half)
    if screen_grad_count is not None:
        screen_grad_count[p.idx] += 1

    # tone-mapper head and color chain
    gx, tm_grads = scene.tone_mapper.backward_inputs(p.x_tm, gcl)
    for k, v in tm_grads.items():
        grads.data[k] += v
    if scene.tone_mapper.domain == "log":
        gs = gch * p.c_h + gx
        if scene.sh_bias_learnable:
            grads.data["sh_bias"] += gx.sum()
    else:
        gs = (gch + gx * p.exposure_time) * p.c_h

    nb = sh.n_coeffs(p.active_degree)
    coeffs = scene.sh_coeffs[p.idx, :nb, :]
    gk = p.basis[:, :, None] * gs[:, None, :]
    grads.data["sh_coeffs"][p.idx, :nb, :] += gk  # p.idx entries are unique

    # view-direction dependence of the SH colors
    wgt = np.einsum("vc,vbc->vb", gs, coeffs)
    dbasis = sh.sh_basis_grad(p.dirs, p.active_degree)
    gdir = np.einsum("vb,vbd->vd", wgt, dbasis)
    radial = np.einsum("vd,vd->v", gdir, p.dirs)
    gpos_dir = (gdir - p.dirs * radial[:, None]) * p.inv_norm[:, None]

    # opacity logit
    grads.data["opacity_logits"][p.idx] += galpha * p.alpha * (1.0 - p.alpha)

    # 2D covariance chain: conic (Q) -> low-passed cov2d -> 3D covariance + camera geometry
    det = p.a * p.c - p.b * p.b
    qmat = np.empty((nv, 2, 2))
    qmat[:, 0, 0] = p.c / det
    qmat[:, 0, 1] = -p.b / det
    qmat[:, 1, 0] = -p.b / det
    qmat[:, 1, 1] = p.a / det
    fq = np.empty((nv, 2, 2))
    fq[:, 0, 0] = gq3[:, 0]
    fq[:, 0, 1] = 0.5 * gq3[:, 1]
    fq[:, 1, 0] = 0.5 * gq3[:, 1]
    fq[:, 1, 1] = gq3[:, 2]
    f2 = -np.einsum("vij,vjk,vkl->vil", qmat, fq, qmat, optimize=True)

    gm2 = 2.0 * np.einsum("vij,vjk,vkl->vil", f2, p.m2, p.cov3, optimize=True)
    gcov3 = np.einsum("vji,vjk,vkl->vil", p.m2, f2, p.m2, optimize=True)

    # covariance factorization: cov3 = R diag(s^2) R^T
    rot = quat_to_rotmat(scene.rotations[p.idx])
    s2 = np.exp(2.0 * scene.log_scales[p.idx])
    gdiag = np.einsum("vji,vjk,vki->vi", rot, gcov3, rot, optimize=True)
    grads.data["log_scales"][p.idx] += gdiag * 2.0 * s2
    grot = 2.0 * np.einsum("vij,vjk->vik", gcov3, rot) * s2[:, None, :]
    drdq = quat_to_rotmat_jac(scene.rotations[p.idx])
    grads.data["rotations"][p.idx] += np.einsum("vij,vkij->vk", grot, drdq, optimize=True)

    # camera-space position chain
    rw = cam.rotation
    gj2 = np.einsum("vij,kj->vik", gm2, rw)
    gv = np.einsum("vji,vj->vi", p.j2, gu)
    fx, fy = cam.fx, cam.fy
    inv_z = 1.0 / p.depth
    inv_z2 = inv_z * inv_z
    inv_z3 = inv_z2 * inv_z
    gv[:, 0] += gj2[:, 0, 2] * (-fx * inv_z2)
    gv[:, 1] += gj2[:, 1, 2] * (-fy * inv_z2)
    gv[:, 2] += (
        gj2[:, 0, 0] * (-fx * inv_z2)
        + gj2[:, 1, 1] * (-fy * inv_z2)
        + gj2[:, 0, 2] * (2.0 * fx * p.v[:, 0] * inv_z3)
        + gj2[:, 1, 2] * (2.0 * fy * p.v[:, 1] * inv_z3)
    )
    grads.data["positions"][p.idx] += gv @ rw + gpos_dir
    return grads


def rasterize_dual_backward(
    scene: DdrScene,
    camera: Camera,
    exposure_time: float | None,
    upstream_hdr: np.ndarray,
    upstream_ldr: np.ndarray,
    *,
    tile_size: int = DEFAULT_TILE_SIZE,
    active_sh_degree: int | None = None,
    near: float = DEFAULT_NEAR_PLANE,
    screen_grad_accum: np.ndarray | None = None,
    screen_grad_count: np.ndarray | None = None,
) -> GradientSet:
    """Cotangents of rasterize_dual for given per-pixel upstream gradients."""
    dt = camera.exposure_time if exposure_time is None else float(exposure_time)
    p = _project(scene, camera, dt, active_sh_degree, near)
    _bin_tiles(p, tile_size)
    return _backward_from_projection(
        scene, p, upstream_hdr, upstream_ldr, screen_grad_accum, screen_grad_count
    )
