"""Training losses and their analytic gradients: L1 + D-SSIM photometric
loss on LDR renders, and a mu-law-compressed L2 constraint on HDR renders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .rasterizer import _backward_from_projection, _bin_tiles, _blend_forward, _project
from .scene import Camera, DdrScene, GradientSet

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 1.0


class LossError(ValueError):
    pass


@dataclass
class LossConfig:
    lambda_dssim: float = 0.2
    gamma_hdr: float = 0.6
    mu_compression: float = 5000.0
    norm_epsilon: float = 1e-8

    def __post_init__(self):
        if not (self.lambda_dssim >= 0.0 and np.isfinite(self.lambda_dssim)):
            raise LossError("lambda_dssim must be finite and >= 0")
        if not (self.gamma_hdr >= 0.0 and np.isfinite(self.gamma_hdr)):
            raise LossError("gamma_hdr must be finite and >= 0")
        if not (self.mu_compression > 0.0 and np.isfinite(self.mu_compression)):
            raise LossError("mu_compression must be finite and > 0")
        if not (self.norm_epsilon > 0.0 and np.isfinite(self.norm_epsilon)):
            raise LossError("norm_epsilon must be finite and > 0")


def _gauss_window() -> np.ndarray:
    t = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(t * t) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return g / g.sum()

_WINDOW = _gauss_window()
_HALF = SSIM_WINDOW // 2


def _filt(img: np.ndarray) -> np.ndarray:
    """Separable 11x11 Gaussian filter, valid region only: (H,W) -> (H-10,W-10)."""
    t = correlate1d(img, _WINDOW, axis=0, mode="constant")[_HALF:-_HALF, :]
    return correlate1d(t, _WINDOW, axis=1, mode="constant")[:, _HALF:-_HALF]


def _filt_adj(grad: np.ndarray, height: int, width: int) -> np.ndarray:
    """Adjoint of _filt (the window is symmetric, so filter of the embedding)."""
    t = np.zeros((grad.shape[0], width))
    t[:, _HALF : width - _HALF] = grad
    t = correlate1d(t, _WINDOW, axis=1, mode="constant")
    out = np.zeros((height, width))
    out[_HALF : height - _HALF, :] = t
    return correlate1d(out, _WINDOW, axis=0, mode="constant")


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LossError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] != 3:
        raise LossError(f"expected (H, W, 3) rasters, got {a.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise LossError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    return a, b


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM over fully interior 11x11 Gaussian windows."""
    a, b = _check_pair(a, b)
    return _ssim_impl(a, b, None)[0]


def ssim_with_grad(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """(mean SSIM, d(mean SSIM)/da); b is treated as the constant reference."""
    a, b = _check_pair(a, b)
    grad = np.zeros_like(a)
    val = _ssim_impl(a, b, grad)[0]
    return val, grad


def _ssim_impl(a, b, grad_out):
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    height, width, _ = a.shape
    total = 0.0
    count = 3 * (height - 2 * _HALF) * (width - 2 * _HALF)
    for ch in range(3):
        x = a[:, :, ch]
        y = b[:, :, ch]
        mx = _filt(x)
        my = _filt(y)
        mxx = _filt(x * x)
        myy = _filt(y * y)
        mxy = _filt(x * y)
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my
        n1 = 2.0 * mx * my + c1
        n2 = 2.0 * cxy + c2
        d1 = mx * mx + my * my + c1
        d2 = vx + vy + c2
        s = (n1 * n2) / (d1 * d2)
        total += float(s.sum())
        if grad_out is not None:
            inv = 1.0 / (d1 * d2)
            # partials w.r.t. the filtered maps (mx, mxx, mxy)
            ds_dmx = 2.0 * my * (n2 - n1) * inv - 2.0 * mx * s / d1 + 2.0 * mx * s / d2
            ds_dmxx = -s / d2
            ds_dmxy = 2.0 * n1 * inv
            u = 1.0 / count
            grad_out[:, :, ch] = (
                _filt_adj(u * ds_dmx, height, width)
                + 2.0 * x * _filt_adj(u * ds_dmxx, height, width)
                + y * _filt_adj(u * ds_dmxy, height, width)
            )
    return total / count, grad_out


def loss_photometric(rendered_ldr, target_ldr, lambda_dssim: float = 0.2):
    """L1 + lambda * D-SSIM, averaged per pixel; returns (loss, cotangent)."""
    a, b = _check_pair(rendered_ldr, target_ldr)
    diff = a - b
    l1 = float(np.abs(diff).mean())
    cot = np.sign(diff) / diff.size
    if lambda_dssim != 0.0:
        sval, sgrad = ssim_with_grad(a, b)
        l1 += lambda_dssim * (1.0 - sval) / 2.0
        cot -= (lambda_dssim / 2.0) * sgrad
    return l1, cot


def mu_law(x: np.ndarray, mu: float = 5000.0) -> np.ndarray:
    """log(1 + mu x)/log(1 + mu): monotone on [0,1] with fixed endpoints."""
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(mu * x) / np.log1p(mu)


def _mu_law_deriv(x: np.ndarray, mu: float) -> np.ndarray:
    return mu / ((1.0 + mu * np.asarray(x, dtype=np.float64)) * np.log1p(mu))


def minmax_normalize(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    lo = float(x.min())
    span = max(float(x.max()) - lo, eps)
    return (x - lo) / span


def loss_hdr_constraint(rendered_hdr, target_hdr, mu: float = 5000.0, eps: float = 1e-8):
    """Mean squared distance between mu-law compressions of the min-max
    normalized rasters. Gradient flows only through the rendered raster;
    normalization min/max receive their subgradient terms."""
    a = np.asarray(rendered_hdr, dtype=np.float64)
    b = np.asarray(target_hdr, dtype=np.float64)
    if a.shape != b.shape:
        raise LossError(f"HDR raster shapes differ: {a.shape} vs {b.shape}")
    if np.any(a < 0.0) or np.any(b < 0.0):
        raise LossError("HDR rasters must be non-negative")
    flat = a.reshape(-1)
    i_min = int(np.argmin(flat))
    i_max = int(np.argmax(flat))
    lo = flat[i_min]
    hi = flat[i_max]
    floored = (hi - lo) < eps
    span = max(hi - lo, eps)
    na = (a - lo) / span
    nb = minmax_normalize(b, eps)
    fa = mu_law(na, mu)
    fb = mu_law(nb, mu)
    diff = fa - fb
    loss = float(np.mean(diff * diff))
    dn = (2.0 / diff.size) * diff * _mu_law_deriv(na, mu)
    cot = dn / span
    cflat = cot.reshape(-1)
    if floored:
        cflat[i_min] += float((dn * (-1.0 / span)).sum())
    else:
        cflat[i_min] += float((dn * (na - 1.0) / span).sum())
        cflat[i_max] += float((dn * (-na) / span).sum())
    return loss, cot


def loss_total(
    scene: DdrScene,
    views: list[tuple[Camera, np.ndarray, np.ndarray | None]],
    config: LossConfig,
    *,
    compute_grads: bool = True,
    tile_size: int = 16,
    active_sh_degree: int | None = None,
    screen_grad_accum: np.ndarray | None = None,
    screen_grad_count: np.ndarray | None = None,
):
    """Sum of photometric losses plus gamma * HDR constraints over a batch.

    views: (camera, ldr_target, hdr_target-or-None) triples; the camera's
    exposure_time selects the LDR pass exposure.
    Returns (loss, GradientSet-or-None, parts dict).
    """
    if not views:
        raise LossError("batch must contain at least one view")
    if config.gamma_hdr > 0.0:
        missing = [i for i, (_, _, h) in enumerate(views) if h is None]
        if missing:
            raise LossError(
                f"gamma_hdr > 0 but views {missing} have no HDR target; "
                "set gamma_hdr=0 or provide targets"
            )
    total = 0.0
    loss_p_sum = 0.0
    loss_c_sum = 0.0
    grads = GradientSet.zeros_for(scene) if compute_grads else None
    for cam, target_ldr, target_hdr in views:
        target_ldr = np.asarray(target_ldr, dtype=np.float64)
        if target_ldr.shape != (cam.height, cam.width, 3):
            raise LossError(
                f"LDR target shape {target_ldr.shape} does not match camera "
                f"({cam.height}, {cam.width}, 3)"
            )
        p = _project(scene, cam, cam.exposure_time, active_sh_degree, 0.01)
        _bin_tiles(p, tile_size)
        img_hdr, img_ldr = _blend_forward(p, scene.background_color)
        lp, up_ldr = loss_photometric(img_ldr, target_ldr, config.lambda_dssim)
        loss_p_sum += lp
        up_hdr = np.zeros_like(img_hdr)
        if config.gamma_hdr > 0.0:
            lc, cot_hdr = loss_hdr_constraint(
                img_hdr, target_hdr, config.mu_compression, config.norm_epsilon
            )
            loss_c_sum += lc
            up_hdr = config.gamma_hdr * cot_hdr
        if compute_grads:
            grads.add(
                _backward_from_projection(
                    scene, p, up_hdr, up_ldr, screen_grad_accum, screen_grad_count
                )
            )
    total = loss_p_sum + config.gamma_hdr * loss_c_sum
    if compute_grads:
        grads.assert_finite()
    return total, grads, {"loss_p": loss_p_sum, "loss_c": loss_c_sum}
