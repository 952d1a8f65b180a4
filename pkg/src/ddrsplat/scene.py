"""Dual dynamic range Gaussian point-cloud scene: per-point geometry,
opacity and log-HDR spherical-harmonics color, plus the shared tone-mapper.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import sh
from .tonemap import ToneMapper

QUAT_NORM_TOL = 1e-6


class SceneError(ValueError):
    """Raised when a scene or camera violates a structural invariant."""


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    if out.ndim == 0:
        return float(out)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p) - np.log1p(-p)
    if out.ndim == 0:
        return float(out)
    return out


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (..., 4) wxyz -> rotation matrices (..., 3, 3).

    Uses the unit-quaternion expansion directly (no internal normalization);
    callers keep quaternions normalized, which makes the map smooth and
    cheap to differentiate.
    """
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[..., 0, 1] = 2.0 * (x * y - w * z)
    m[..., 0, 2] = 2.0 * (x * z + w * y)
    m[..., 1, 0] = 2.0 * (x * y + w * z)
    m[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[..., 1, 2] = 2.0 * (y * z - w * x)
    m[..., 2, 0] = 2.0 * (x * z - w * y)
    m[..., 2, 1] = 2.0 * (y * z + w * x)
    m[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


def quat_to_rotmat_jac(q: np.ndarray) -> np.ndarray:
    """dR/dq for the raw unit-quaternion expansion: (..., 4, 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    zero = np.zeros_like(w)
    j = np.empty(q.shape[:-1] + (4, 3, 3), dtype=np.float64)
    # dR/dw
    j[..., 0, 0, 0] = zero
    j[..., 0, 0, 1] = -2.0 * z
    j[..., 0, 0, 2] = 2.0 * y
    j[..., 0, 1, 0] = 2.0 * z
    j[..., 0, 1, 1] = zero
    j[..., 0, 1, 2] = -2.0 * x
    j[..., 0, 2, 0] = -2.0 * y
    j[..., 0, 2, 1] = 2.0 * x
    j[..., 0, 2, 2] = zero
    # dR/dx
    j[..., 1, 0, 0] = zero
    j[..., 1, 0, 1] = 2.0 * y
    j[..., 1, 0, 2] = 2.0 * z
    j[..., 1, 1, 0] = 2.0 * y
    j[..., 1, 1, 1] = -4.0 * x
    j[..., 1, 1, 2] = -2.0 * w
    j[..., 1, 2, 0] = 2.0 * z
    j[..., 1, 2, 1] = 2.0 * w
    j[..., 1, 2, 2] = -4.0 * x
    # dR/dy
    j[..., 2, 0, 0] = -4.0 * y
    j[..., 2, 0, 1] = 2.0 * x
    j[..., 2, 0, 2] = 2.0 * w
    j[..., 2, 1, 0] = 2.0 * x
    j[..., 2, 1, 1] = zero
    j[..., 2, 1, 2] = 2.0 * z
    j[..., 2, 2, 0] = -2.0 * w
    j[..., 2, 2, 1] = 2.0 * z
    j[..., 2, 2, 2] = -4.0 * y
    # dR/dz
    j[..., 3, 0, 0] = -4.0 * z
    j[..., 3, 0, 1] = -2.0 * w
    j[..., 3, 0, 2] = 2.0 * x
    j[..., 3, 1, 0] = 2.0 * w
    j[..., 3, 1, 1] = -4.0 * z
    j[..., 3, 1, 2] = 2.0 * y
    j[..., 3, 2, 0] = 2.0 * x
    j[..., 3, 2, 1] = 2.0 * y
    j[..., 3, 2, 2] = zero
    return j


def build_covariance(rotation: np.ndarray, log_scale: np.ndarray) -> np.ndarray:
    """3x3 covariance R * diag(exp(log_scale))^2 * R^T.

    The quaternion is normalized defensively, so the result is always a
    symmetric PSD matrix.
    """
    q = np.asarray(rotation, dtype=np.float64)
    norm = np.linalg.norm(q)
    if norm == 0.0:
        raise SceneError("zero quaternion has no rotation")
    q = q / norm
    r = quat_to_rotmat(q)
    s2 = np.exp(2.0 * np.asarray(log_scale, dtype=np.float64))
    return (r * s2) @ r.T


def build_covariances(rotations: np.ndarray, log_scales: np.ndarray) -> np.ndarray:
    """Batched covariance without normalization (scene quaternions stay unit)."""
    r = quat_to_rotmat(rotations)
    s2 = np.exp(2.0 * np.asarray(log_scales, dtype=np.float64))
    return (r * s2[..., None, :]) @ np.swapaxes(r, -1, -2)


@dataclass
class DdrGaussian:
    """A single dual-range Gaussian point.

    sh_coeffs hold the log-domain HDR color expansion; opacity and scale are
    stored in logit/log domain so any real-valued update stays in range.
    """

    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    sh_coeffs: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.opacity_logit = float(self.opacity_logit)
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64)
        if self.sh_coeffs.ndim != 2 or self.sh_coeffs.shape[1] != 3:
            raise SceneError(f"sh_coeffs must be (n_basis, 3), got {self.sh_coeffs.shape}")
        n = self.sh_coeffs.shape[0]
        if int(np.sqrt(n)) ** 2 != n:
            raise SceneError(f"sh_coeffs length {n} is not (L+1)^2 for any degree L")

    @property
    def opacity(self) -> float:
        return sigmoid(self.opacity_logit)

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def sh_degree(self) -> int:
        return int(np.sqrt(self.sh_coeffs.shape[0])) - 1

    def covariance(self) -> np.ndarray:
        return build_covariance(self.rotation, self.log_scale)


@dataclass
class Camera:
    """Pinhole camera: world-to-camera extrinsics (camera looks down +z, y down),
    3x4 intrinsics in pixels, and the exposure time of the captured image."""

    extrinsics: np.ndarray
    intrinsics: np.ndarray
    width: int
    height: int
    exposure_time: float
    name: str = ""

    def __post_init__(self):
        self.extrinsics = np.asarray(self.extrinsics, dtype=np.float64).reshape(4, 4)
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 4)
        self.width = int(self.width)
        self.height = int(self.height)
        self.exposure_time = float(self.exposure_time)
        if not (self.exposure_time > 0.0 and np.isfinite(self.exposure_time)):
            raise SceneError(f"exposure_time must be positive and finite, got {self.exposure_time}")
        if self.width < 1 or self.height < 1:
            raise SceneError("image dimensions must be positive")
        r = self.extrinsics[:3, :3]
        if np.max(np.abs(r @ r.T - np.eye(3))) > QUAT_NORM_TOL:
            raise SceneError("extrinsics rotation block is not orthonormal")
        if np.linalg.det(r) < 0.0:
            raise SceneError("extrinsics rotation block must have determinant +1")
        if np.max(np.abs(self.extrinsics[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-12:
            raise SceneError("extrinsics last row must be [0, 0, 0, 1]")
        k = self.intrinsics
        pattern = np.zeros((3, 4))
        pattern[0, 0] = k[0, 0]
        pattern[1, 1] = k[1, 1]
        pattern[0, 2] = k[0, 2]
        pattern[1, 2] = k[1, 2]
        pattern[2, 2] = 1.0
        if np.max(np.abs(k - pattern)) > 1e-12:
            raise SceneError("intrinsics must be a pinhole matrix [[fx,0,cx,0],[0,fy,cy,0],[0,0,1,0]]")
        if k[0, 0] <= 0.0 or k[1, 1] <= 0.0:
            raise SceneError("focal lengths must be positive")

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsics[:3, 3]

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def with_exposure(self, exposure_time: float) -> "Camera":
        return replace(self, exposure_time=float(exposure_time))


def make_intrinsics(fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    k = np.zeros((3, 4), dtype=np.float64)
    k[0, 0] = fx
    k[1, 1] = fy
    k[0, 2] = cx
    k[1, 2] = cy
    k[2, 2] = 1.0
    return k


class DdrScene:
    """Array-of-points scene; all points share one tone-mapper and one SH degree."""

    def __init__(
        self,
        positions: np.ndarray,
        rotations: np.ndarray,
        log_scales: np.ndarray,
        opacity_logits: np.ndarray,
        sh_coeffs: np.ndarray,
        tone_mapper: ToneMapper,
        sh_degree: int = 3,
        sh_bias: float = 0.0,
        sh_bias_learnable: bool = False,
        background_color=(0.0, 0.0, 0.0),
    ):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.ascontiguousarray(log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.ascontiguousarray(opacity_logits, dtype=np.float64).reshape(n)
        self.sh_coeffs = np.ascontiguousarray(sh_coeffs, dtype=np.float64).reshape(
            n, sh.n_coeffs(sh_degree), 3
        )
        self.tone_mapper = tone_mapper
        self.sh_degree = int(sh_degree)
        self.sh_bias = float(sh_bias)
        self.sh_bias_learnable = bool(sh_bias_learnable)
        self.background_color = np.asarray(background_color, dtype=np.float64).reshape(3)
        self.validate()

    @property
    def n_gaussians(self) -> int:
        return self.positions.shape[0]

    def __len__(self) -> int:
        return self.n_gaussians

    def validate(self, max_gaussians: int | None = None) -> None:
        if self.n_gaussians < 1:
            raise SceneError("scene must contain at least one gaussian")
        if max_gaussians is not None and self.n_gaussians > max_gaussians:
            raise SceneError(f"scene exceeds cap: {self.n_gaussians} > {max_gaussians}")
        if not 0 <= self.sh_degree <= sh.MAX_DEGREE:
            raise SceneError(f"sh_degree {self.sh_degree} out of range")
        if self.sh_coeffs.shape[1] != sh.n_coeffs(self.sh_degree):
            raise SceneError("sh_coeffs second axis does not match (L+1)^2")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.max(np.abs(norms - 1.0)) > QUAT_NORM_TOL:
            raise SceneError("scene contains non-unit quaternions")
        for name, arr in self.params().items():
            if not np.all(np.isfinite(arr)):
                raise SceneError(f"non-finite values in {name}")
        if np.any(self.background_color < 0.0) or np.any(self.background_color > 1.0):
            raise SceneError("background_color must lie in [0, 1]")

    def params(self) -> dict[str, np.ndarray]:
        """Learnable arrays by name.

        Array-valued entries are live views; "sh_bias" is a one-element
        snapshot. Writers should go through set_param, which handles both.
        """
        out = {
            "positions": self.positions,
            "rotations": self.rotations,
            "log_scales": self.log_scales,
            "opacity_logits": self.opacity_logits,
            "sh_coeffs": self.sh_coeffs,
        }
        out.update(self.tone_mapper.params())
        if self.sh_bias_learnable:
            out["sh_bias"] = np.array([self.sh_bias])
        return out

    def set_param(self, name: str, value: np.ndarray) -> None:
        if name == "sh_bias":
            self.sh_bias = float(np.asarray(value).reshape(()))
        elif name.startswith("tm."):
            self.tone_mapper.set_param(name, value)
        else:
            getattr(self, name)[...] = value

    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def normalize_rotations(self) -> None:
        self.rotations /= np.linalg.norm(self.rotations, axis=1, keepdims=True)

    def gaussian(self, i: int) -> DdrGaussian:
        return DdrGaussian(
            position=self.positions[i].copy(),
            rotation=self.rotations[i].copy(),
            log_scale=self.log_scales[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            sh_coeffs=self.sh_coeffs[i].copy(),
        )

    def __iter__(self) -> Iterator[DdrGaussian]:
        return (self.gaussian(i) for i in range(self.n_gaussians))

    def copy(self) -> "DdrScene":
        return DdrScene(
            self.positions.copy(),
            self.rotations.copy(),
            self.log_scales.copy(),
            self.opacity_logits.copy(),
            self.sh_coeffs.copy(),
            self.tone_mapper.copy(),
            sh_degree=self.sh_degree,
            sh_bias=self.sh_bias,
            sh_bias_learnable=self.sh_bias_learnable,
            background_color=self.background_color.copy(),
        )

    @classmethod
    def from_gaussians(
        cls,
        gaussians: list[DdrGaussian],
        tone_mapper: ToneMapper,
        sh_degree: int = 3,
        **kwargs,
    ) -> "DdrScene":
        if not gaussians:
            raise SceneError("scene must contain at least one gaussian")
        nb = sh.n_coeffs(sh_degree)
        for g in gaussians:
            if g.sh_coeffs.shape[0] != nb:
                raise SceneError(
                    f"gaussian has {g.sh_coeffs.shape[0]} sh coefficients, scene degree "
                    f"{sh_degree} needs {nb}"
                )
        return cls(
            positions=np.stack([g.position for g in gaussians]),
            rotations=np.stack([g.rotation for g in gaussians]),
            log_scales=np.stack([g.log_scale for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians]),
            sh_coeffs=np.stack([g.sh_coeffs for g in gaussians]),
            tone_mapper=tone_mapper,
            sh_degree=sh_degree,
            **kwargs,
        )


@dataclass
class GradientSet:
    """Cotangents mirroring every learnable array of a scene."""

    data: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_for(cls, scene: DdrScene) -> "GradientSet":
        return cls({k: np.zeros_like(v) for k, v in scene.params().items()})

    def __getitem__(self, key: str) -> np.ndarray:
        return self.data[key]

    def __contains__(self, key: str) -> bool:
        return key in self.data

    def keys(self):
        return self.data.keys()

    def items(self):
        return self.data.items()

    def add(self, other: "GradientSet", scale: float = 1.0) -> "GradientSet":
        for k, v in other.data.items():
            self.data[k] += scale * v
        return self

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet({k: factor * v for k, v in self.data.items()})

    def assert_finite(self) -> None:
        for k, v in self.data.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"non-finite gradient in {k}")

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(v))) if v.size else 0.0) for v in self.data.values())
