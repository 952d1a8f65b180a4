"""Real spherical harmonics basis (degrees 0..3) and its direction gradient.

Coefficient layout is band-major: index b = l*(l+1) + m for band l and
order m, so a degree-L expansion uses the first (L+1)^2 entries.
"""

from __future__ import annotations

import numpy as np

MAX_DEGREE = 3

# Band normalization constants; Y_0^0 = 1/(2*sqrt(pi)).
C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    1.0925484305920792,
    0.31539156525252005,
    1.0925484305920792,
    0.5462742152960396,
)
C3 = (
    0.5900435899266435,
    2.890611442640554,
    0.4570457994644658,
    0.3731763325901154,
    0.4570457994644658,
    1.445305721320277,
    0.5900435899266435,
)


def n_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate the basis at unit directions.

    dirs: (..., 3) unit vectors. Returns (..., (degree+1)^2).
    """
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"sh degree must be in [0, {MAX_DEGREE}], got {degree}")
    dirs = np.asarray(dirs, dtype=np.float64)
    out = np.empty(dirs.shape[:-1] + (n_coeffs(degree),), dtype=np.float64)
    out[..., 0] = C0
    if degree == 0:
        return out
    x = dirs[..., 0]
    y = dirs[..., 1]
    z = dirs[..., 2]
    out[..., 1] = C1 * y
    out[..., 2] = C1 * z
    out[..., 3] = C1 * x
    if degree == 1:
        return out
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out[..., 4] = C2[0] * xy
    out[..., 5] = C2[1] * yz
    out[..., 6] = C2[2] * (2.0 * zz - xx - yy)
    out[..., 7] = C2[3] * xz
    out[..., 8] = C2[4] * (xx - yy)
    if degree == 2:
        return out
    out[..., 9] = C3[0] * y * (3.0 * xx - yy)
    out[..., 10] = C3[1] * xy * z
    out[..., 11] = C3[2] * y * (4.0 * zz - xx - yy)
    out[..., 12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[..., 13] = C3[4] * x * (4.0 * zz - xx - yy)
    out[..., 14] = C3[5] * z * (xx - yy)
    out[..., 15] = C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Partial derivatives of each basis polynomial w.r.t. (x, y, z).

    Returns (..., (degree+1)^2, 3). The polynomials are differentiated as
    functions on R^3; callers composing with a normalization must project
    out the radial component themselves.
    """
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"sh degree must be in [0, {MAX_DEGREE}], got {degree}")
    dirs = np.asarray(dirs, dtype=np.float64)
    out = np.zeros(dirs.shape[:-1] + (n_coeffs(degree), 3), dtype=np.float64)
    if degree == 0:
        return out
    x = dirs[..., 0]
    y = dirs[..., 1]
    z = dirs[..., 2]
    out[..., 1, 1] = C1
    out[..., 2, 2] = C1
    out[..., 3, 0] = C1
    if degree == 1:
        return out
    xx, yy, zz = x * x, y * y, z * z
    out[..., 4, 0] = C2[0] * y
    out[..., 4, 1] = C2[0] * x
    out[..., 5, 1] = C2[1] * z
    out[..., 5, 2] = C2[1] * y
    out[..., 6, 0] = C2[2] * (-2.0 * x)
    out[..., 6, 1] = C2[2] * (-2.0 * y)
    out[..., 6, 2] = C2[2] * (4.0 * z)
    out[..., 7, 0] = C2[3] * z
    out[..., 7, 2] = C2[3] * x
    out[..., 8, 0] = C2[4] * (2.0 * x)
    out[..., 8, 1] = C2[4] * (-2.0 * y)
    if degree == 2:
        return out
    out[..., 9, 0] = C3[0] * (6.0 * x * y)
    out[..., 9, 1] = C3[0] * (3.0 * xx - 3.0 * yy)
    out[..., 10, 0] = C3[1] * (y * z)
    out[..., 10, 1] = C3[1] * (x * z)
    out[..., 10, 2] = C3[1] * (x * y)
    out[..., 11, 0] = C3[2] * (-2.0 * x * y)
    out[..., 11, 1] = C3[2] * (4.0 * zz - xx - 3.0 * yy)
    out[..., 11, 2] = C3[2] * (8.0 * y * z)
    out[..., 12, 0] = C3[3] * (-6.0 * x * z)
    out[..., 12, 1] = C3[3] * (-6.0 * y * z)
    out[..., 12, 2] = C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
    out[..., 13, 0] = C3[4] * (4.0 * zz - 3.0 * xx - yy)
    out[..., 13, 1] = C3[4] * (-2.0 * x * y)
    out[..., 13, 2] = C3[4] * (8.0 * x * z)
    out[..., 14, 0] = C3[5] * (2.0 * x * z)
    out[..., 14, 1] = C3[5] * (-2.0 * y * z)
    out[..., 14, 2] = C3[5] * (xx - yy)
    out[..., 15, 0] = C3[6] * (3.0 * xx - 3.0 * yy)
    out[..., 15, 1] = C3[6] * (-6.0 * x * y)
    return out


def eval_sh(direction: np.ndarray, sh_coeffs: np.ndarray, degree: int) -> np.ndarray:
    """Sum of coefficients times basis values; one output per color channel.

    direction: (3,) unit vector. sh_coeffs: ((degree+1)^2, 3).
    Returns (3,), the log-domain HDR color.
    """
    sh_coeffs = np.asarray(sh_coeffs, dtype=np.float64)
    expected = n_coeffs(degree)
    if sh_coeffs.shape != (expected, 3):
        raise ValueError(
            f"sh_coeffs shape {sh_coeffs.shape} does not match degree {degree} "
            f"(expected ({expected}, 3))"
        )
    basis = sh_basis(direction, degree)
    return basis @ sh_coeffs


def hdr_color(direction: np.ndarray, sh_coeffs: np.ndarray, degree: int) -> np.ndarray:
    """Strictly positive HDR radiance: exp of the log-domain expansion."""
    return np.exp(eval_sh(direction, sh_coeffs, degree))
