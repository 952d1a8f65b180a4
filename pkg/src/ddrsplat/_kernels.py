"""Tile-parallel pixel loops for the dual rasterizer.

Blending semantics shared by forward, backward and the test oracle:
  - density exp(-m/2) with m the Mahalanobis distance^2 under the
    low-passed 2D covariance; points beyond 6 sigma (m > 36) are skipped,
    which caps the dropped weight at exp(-18) ~ 1.5e-8 so the blend stays
    differentiable to well below every stated tolerance,
  - per-point weight sigma = opacity * density, clamped to <= 0.99,
  - front-to-back compositing terminated once transmittance < 1e-4.

Each tile owns a disjoint slice of the pair arrays, so results are
independent of the threading schedule.
"""

import math

import numpy as np
from numba import njit, prange

MAHALANOBIS_CUTOFF = 36.0
SIGMA_CLAMP = 0.99
TRANSMITTANCE_EPS = 1e-4


@njit(cache=True, parallel=True)
def blend_forward(
    pair_gid,
    tile_start,
    ux,
    uy,
    qa,
    qb,
    qc,
    alpha,
    ch,
    cl,
    height,
    width,
    tile_size,
    tiles_x,
    bg,
    out_hdr,
    out_ldr,
):
    n_tiles = tile_start.shape[0] - 1
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t % tiles_x
        x0 = tx * tile_size
        y0 = ty * tile_size
        x1 = min(x0 + tile_size, width)
        y1 = min(y0 + tile_size, height)
        s0 = tile_start[t]
        s1 = tile_start[t + 1]
        for py in range(y0, y1):
            pcy = py + 0.5
            for px in range(x0, x1):
                pcx = px + 0.5
                trans = 1.0
                h0 = 0.0
                h1 = 0.0
                h2 = 0.0
                l0 = 0.0
                l1 = 0.0
                l2 = 0.0
                for s in range(s0, s1):
                    g = pair_gid[s]
                    dx = pcx - ux[g]
                    dy = pcy - uy[g]
                    m = qa[g] * dx * dx + 2.0 * qb[g] * dx * dy + qc[g] * dy * dy
                    if m > MAHALANOBIS_CUTOFF:
                        continue
                    sig = alpha[g] * math.exp(-0.5 * m)
                    if sig > SIGMA_CLAMP:
                        sig = SIGMA_CLAMP
                    w = sig * trans
                    h0 += w * ch[g, 0]
                    h1 += w * ch[g, 1]
                    h2 += w * ch[g, 2]
                    l0 += w * cl[g, 0]
                    l1 += w * cl[g, 1]
                    l2 += w * cl[g, 2]
                    trans *= 1.0 - sig
                    if trans < TRANSMITTANCE_EPS:
                        break
                out_hdr[py, px, 0] = h0 + trans * bg[0]
                out_hdr[py, px, 1] = h1 + trans * bg[1]
                out_hdr[py, px, 2] = h2 + trans * bg[2]
                out_ldr[py, px, 0] = l0 + trans * bg[0]
                out_ldr[py, px, 1] = l1 + trans * bg[1]
                out_ldr[py, px, 2] = l2 + trans * bg[2]


@njit(cache=True, parallel=True)
def blend_backward(
    pair_gid,
    tile_start,
    ux,
    uy,
    qa,
    qb,
    qc,
    alpha,
    ch,
    cl,
    height,
    width,
    tile_size,
    tiles_x,
    bg,
    up_hdr,
    up_ldr,
    g_u,
    g_q,
    g_alpha,
    g_ch,
    g_cl,
):
    """Per-pair cotangents; forward state is recomputed per pixel so memory
    stays O(pairs). Pair slots are written only by their owning tile."""
    n_tiles = tile_start.shape[0] - 1
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t % tiles_x
        x0 = tx * tile_size
        y0 = ty * tile_size
        x1 = min(x0 + tile_size, width)
        y1 = min(y0 + tile_size, height)
        s0 = tile_start[t]
        s1 = tile_start[t + 1]
        k_max = s1 - s0
        if k_max == 0:
            continue
        sig_buf = np.empty(k_max, dtype=np.float64)
        trans_buf = np.empty(k_max, dtype=np.float64)
        for py in range(y0, y1):
            pcy = py + 0.5
            for px in range(x0, x1):
                pcx = px + 0.5
                # forward sweep: sigma and incoming transmittance per pair
                trans = 1.0
                n_proc = k_max
                for j in range(k_max):
                    g = pair_gid[s0 + j]
                    dx = pcx - ux[g]
                    dy = pcy - uy[g]
                    m = qa[g] * dx * dx + 2.0 * qb[g] * dx * dy + qc[g] * dy * dy
                    if m > MAHALANOBIS_CUTOFF:
                        sig_buf[j] = 0.0
                        trans_buf[j] = trans
                        continue
                    sig = alpha[g] * math.exp(-0.5 * m)
                    if sig > SIGMA_CLAMP:
                        sig = SIGMA_CLAMP
                    sig_buf[j] = sig
                    trans_buf[j] = trans
                    trans *= 1.0 - sig
                    if trans < TRANSMITTANCE_EPS:
                        n_proc = j + 1
                        break
                uh0 = up_hdr[py, px, 0]
                uh1 = up_hdr[py, px, 1]
                uh2 = up_hdr[py, px, 2]
                ul0 = up_ldr[py, px, 0]
                ul1 = up_ldr[py, px, 1]
                ul2 = up_ldr[py, px, 2]
                if (
                    uh0 == 0.0
                    and uh1 == 0.0
                    and uh2 == 0.0
                    and ul0 == 0.0
                    and ul1 == 0.0
                    and ul2 == 0.0
                ):
                    continue
                # suffix blended colors (everything composited after point j)
                sh0 = trans * bg[0]
                sh1 = trans * bg[1]
                sh2 = trans * bg[2]
                sl0 = trans * bg[0]
                sl1 = trans * bg[1]
                sl2 = trans * bg[2]
                for j in range(n_proc - 1, -1, -1):
                    sig = sig_buf[j]
                    if sig == 0.0:
                        continue
                    s = s0 + j
                    g = pair_gid[s]
                    tj = trans_buf[j]
                    w = sig * tj
                    g_ch[s, 0] += w * uh0
                    g_ch[s, 1] += w * uh1
                    g_ch[s, 2] += w * uh2
                    g_cl[s, 0] += w * ul0
                    g_cl[s, 1] += w * ul1
                    g_cl[s, 2] += w * ul2
                    inv1m = 1.0 / (1.0 - sig)
                    dsig = (
                        uh0 * (tj * ch[g, 0] - sh0 * inv1m)
                        + uh1 * (tj * ch[g, 1] - sh1 * inv1m)
                        + uh2 * (tj * ch[g, 2] - sh2 * inv1m)
                        + ul0 * (tj * cl[g, 0] - sl0 * inv1m)
                        + ul1 * (tj * cl[g, 1] - sl1 * inv1m)
                        + ul2 * (tj * cl[g, 2] - sl2 * inv1m)
                    )
                    if sig < SIGMA_CLAMP:  # clamped sigma is locally constant
                        dens = sig / alpha[g]
                        g_alpha[s] += dsig * dens
                        dm = -0.5 * dsig * sig
                        dx = pcx - ux[g]
                        dy = pcy - uy[g]
                        ddx = dm * (2.0 * qa[g] * dx + 2.0 * qb[g] * dy)
                        ddy = dm * (2.0 * qb[g] * dx + 2.0 * qc[g] * dy)
                        g_u[s, 0] -= ddx
                        g_u[s, 1] -= ddy
                        g_q[s, 0] += dm * dx * dx
                        g_q[s, 1] += dm * 2.0 * dx * dy
                        g_q[s, 2] += dm * dy * dy
                    # roll suffixes back to cover point j as well
                    sh0 += w * ch[g, 0]
                    sh1 += w * ch[g, 1]
                    sh2 += w * ch[g, 2]
                    sl0 += w * cl[g, 0]
                    sl1 += w * cl[g, 1]
                    sl2 += w * cl[g, 2]
