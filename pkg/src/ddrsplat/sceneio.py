"""Dataset ingestion, scene initialization, the synthetic fixture generator
and checkpoint persistence.

Conventions (asserted by the fixture round trips): extrinsics are
world-to-camera, the camera looks down +z with y down; the manifest is a
single JSON document next to the image files.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import images
from .rasterizer import rasterize_dual
from .scene import Camera, DdrScene, SceneError, logit, make_intrinsics
from .tonemap import ToneMapper

MANIFEST_FORMAT = "ddrsplat-dataset-v1"
CHECKPOINT_MAGIC = b"DDRS"
CHECKPOINT_VERSION = 1


class SceneIoError(ValueError):
    pass


# --------------------------------------------------------------------------
# dataset manifest
# --------------------------------------------------------------------------

@dataclass
class ViewRecord:
    image_path: str
    extrinsics: np.ndarray
    exposure_time: float
    split: str
    hdr_path: str | None = None

    def __post_init__(self):
        self.extrinsics = np.asarray(self.extrinsics, dtype=np.float64).reshape(4, 4)
        self.exposure_time = float(self.exposure_time)
        if self.split not in ("train", "test"):
            raise SceneIoError(f"split must be 'train' or 'test', got {self.split!r}")


@dataclass
class DatasetManifest:
    root: Path
    width: int
    height: int
    intrinsics: np.ndarray
    exposure_levels: list[float]
    train_exposure_levels: list[float]
    sparse_points: np.ndarray
    views: list[ViewRecord]
    sfm_exposure: float | None = None

    def __post_init__(self):
        self.root = Path(self.root)
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 4)
        self.sparse_points = np.asarray(self.sparse_points, dtype=np.float64).reshape(-1, 3)

    def camera(self, i: int) -> Camera:
        v = self.views[i]
        return Camera(
            extrinsics=v.extrinsics,
            intrinsics=self.intrinsics,
            width=self.width,
            height=self.height,
            exposure_time=v.exposure_time,
            name=v.image_path,
        )

    def view_indices(self, split: str) -> list[int]:
        return [i for i, v in enumerate(self.views) if v.split == split]

    def image(self, i: int) -> np.ndarray:
        return images.read_png(self.root / self.views[i].image_path)

    def hdr_target(self, i: int) -> np.ndarray | None:
        v = self.views[i]
        if v.hdr_path is None:
            return None
        return np.asarray(images.read_pfm(self.root / v.hdr_path), dtype=np.float64)

    def validate(self) -> None:
        train = self.view_indices("train")
        if not train:
            raise SceneIoError("manifest has no training views")
        if not self.exposure_levels or any(t <= 0 for t in self.exposure_levels):
            raise SceneIoError("exposure_levels must be positive")
        declared = set(self.train_exposure_levels)
        if not declared <= set(self.exposure_levels):
            raise SceneIoError("train_exposure_levels must be a subset of exposure_levels")
        for i, v in enumerate(self.views):
            tag = f"view {i} ({v.image_path})"
            if not (v.exposure_time > 0 and np.isfinite(v.exposure_time)):
                raise SceneIoError(f"{tag}: exposure_time must be positive")
            if v.split == "train" and v.exposure_time not in declared:
                raise SceneIoError(
                    f"{tag}: train exposure {v.exposure_time} not in declared set {sorted(declared)}"
                )
            if not (self.root / v.image_path).is_file():
                raise SceneIoError(f"{tag}: image file missing")
            if v.hdr_path is not None and not (self.root / v.hdr_path).is_file():
                raise SceneIoError(f"{tag}: HDR target {v.hdr_path} missing")
            try:
                self.camera(i)
            except SceneError as e:
                raise SceneIoError(f"{tag}: bad camera: {e}") from e


def manifest_to_dict(m: DatasetManifest) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "width": m.width,
        "height": m.height,
        "intrinsics": m.intrinsics.tolist(),
        "exposure_levels": list(m.exposure_levels),
        "train_exposure_levels": list(m.train_exposure_levels),
        "sfm_exposure": m.sfm_exposure,
        "sparse_points": m.sparse_points.tolist(),
        "views": [
            {
                "image": v.image_path,
                "extrinsics": v.extrinsics.tolist(),
                "exposure_time": v.exposure_time,
                "split": v.split,
                "hdr_target": v.hdr_path,
            }
            for v in m.views
        ],
    }


def save_manifest(m: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest_to_dict(m), indent=1, sort_keys=True))


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise SceneIoError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SceneIoError(f"{path}: not valid JSON ({e})") from e
    if doc.get("format") != MANIFEST_FORMAT:
        raise SceneIoError(f"{path}: unknown manifest format {doc.get('format')!r}")
    try:
        views = [
            ViewRecord(
                image_path=v["image"],
                extrinsics=np.array(v["extrinsics"], dtype=np.float64),
                exposure_time=v["exposure_time"],
                split=v["split"],
                hdr_path=v.get("hdr_target"),
            )
            for v in doc["views"]
        ]
        m = DatasetManifest(
            root=path.parent,
            width=int(doc["width"]),
            height=int(doc["height"]),
            intrinsics=np.array(doc["intrinsics"], dtype=np.float64),
            exposure_levels=[float(t) for t in doc["exposure_levels"]],
            train_exposure_levels=[float(t) for t in doc["train_exposure_levels"]],
            sfm_exposure=doc.get("sfm_exposure"),
            sparse_points=np.array(doc["sparse_points"], dtype=np.float64).reshape(-1, 3),
            views=views,
        )
    except (KeyError, ValueError) as e:
        raise SceneIoError(f"{path}: malformed manifest field: {e}") from e
    m.validate()
    return m


# --------------------------------------------------------------------------
# sparse-reconstruction text tables (COLMAP layout)
# --------------------------------------------------------------------------

def _quat_to_rot(qw, qx, qy, qz):
    from .scene import quat_to_rotmat

    q = np.array([qw, qx, qy, qz], dtype=np.float64)
    return quat_to_rotmat(q / np.linalg.norm(q))


def ingest_colmap(sparse_dir):
    """Read cameras.txt / images.txt / points3D.txt.

    Returns (intrinsics dict, [(image_name, extrinsics 4x4)] sorted by image
    id, points (N, 3)). Only pinhole camera models are accepted.
    """
    sparse_dir = Path(sparse_dir)
    cam_file = sparse_dir / "cameras.txt"
    img_file = sparse_dir / "images.txt"
    pts_file = sparse_dir / "points3D.txt"
    for f in (cam_file, img_file, pts_file):
        if not f.is_file():
            raise SceneIoError(f"missing sparse-reconstruction table: {f}")

    intr = None
    for ln, line in enumerate(cam_file.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 5:
            raise SceneIoError(f"{cam_file}:{ln}: malformed camera row")
        model = parts[1]
        width, height = int(parts[2]), int(parts[3])
        params = [float(p) for p in parts[4:]]
        if model == "PINHOLE":
            fx, fy, cx, cy = params[:4]
        elif model == "SIMPLE_PINHOLE":
            fx = fy = params[0]
            cx, cy = params[1], params[2]
        else:
            raise SceneIoError(f"{cam_file}:{ln}: unsupported camera model {model!r} (pinhole only)")
        if intr is not None:
            raise SceneIoError(f"{cam_file}:{ln}: multiple cameras; expected one shared pinhole")
        intr = {"fx": fx, "fy": fy, "cx": cx, "cy": cy, "width": width, "height": height}
    if intr is None:
        raise SceneIoError(f"{cam_file}: no camera rows")

    poses = {}
    lines = img_file.read_text().splitlines()
    ln = 0
    expect_points_row = False
    for raw in lines:
        ln += 1
        line = raw.strip()
        if line.startswith("#"):
            continue
        if expect_points_row:  # 2D-3D correspondence row (may be empty)
            expect_points_row = False
            continue
        if not line:
            continue
        parts = line.split()
        if len(parts) < 10:
            raise SceneIoError(f"{img_file}:{ln}: malformed image row ({len(parts)} fields)")
        try:
            image_id = int(parts[0])
            qw, qx, qy, qz = (float(p) for p in parts[1:5])
            tx, ty, tz = (float(p) for p in parts[5:8])
        except ValueError as e:
            raise SceneIoError(f"{img_file}:{ln}: {e}") from e
        name = parts[9]
        ext = np.eye(4)
        ext[:3, :3] = _quat_to_rot(qw, qx, qy, qz)
        ext[:3, 3] = (tx, ty, tz)
        poses[image_id] = (name, ext)
        expect_points_row = True

    points = []
    for ln, raw in enumerate(pts_file.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 4:
            raise SceneIoError(f"{pts_file}:{ln}: malformed point row")
        try:
            points.append([float(parts[1]), float(parts[2]), float(parts[3])])
        except ValueError as e:
            raise SceneIoError(f"{pts_file}:{ln}: {e}") from e

    ordered = [poses[k] for k in sorted(poses)]
    return intr, ordered, np.array(points, dtype=np.float64).reshape(-1, 3)


def export_colmap_text(out_dir, intrinsics: dict, named_extrinsics, points) -> None:
    """Write the three text tables (used for ingest round-trip checks)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    intr = intrinsics
    (out_dir / "cameras.txt").write_text(
        "# Camera list\n"
        f"1 PINHOLE {int(intr['width'])} {int(intr['height'])} "
        f"{float(intr['fx'])!r} {float(intr['fy'])!r} "
        f"{float(intr['cx'])!r} {float(intr['cy'])!r}\n"
    )
    img_lines = ["# Image list: two rows per image"]
    for i, (name, ext) in enumerate(named_extrinsics, 1):
        q = [float(v) for v in _rot_to_quat(ext[:3, :3])]
        t = [float(v) for v in ext[:3, 3]]
        img_lines.append(
            f"{i} {q[0]!r} {q[1]!r} {q[2]!r} {q[3]!r} {t[0]!r} {t[1]!r} {t[2]!r} 1 {name}"
        )
        img_lines.append("")  # empty 2D-3D correspondence row
    (out_dir / "images.txt").write_text("\n".join(img_lines) + "\n")
    pts_lines = ["# 3D point list"]
    for i, p in enumerate(np.asarray(points), 1):
        pts_lines.append(
            f"{i} {float(p[0])!r} {float(p[1])!r} {float(p[2])!r} 128 128 128 0.0"
        )
    (out_dir / "points3D.txt").write_text("\n".join(pts_lines) + "\n")


def _rot_to_quat(r: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion wxyz (w >= 0)."""
    m = np.asarray(r, dtype=np.float64)
    k = (
        np.array(
            [
                [m[0, 0] - m[1, 1] - m[2, 2], 0, 0, 0],
                [m[0, 1] + m[1, 0], m[1, 1] - m[0, 0] - m[2, 2], 0, 0],
                [m[0, 2] + m[2, 0], m[1, 2] + m[2, 1], m[2, 2] - m[0, 0] - m[1, 1], 0],
                [m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1], m[0, 0] + m[1, 1] + m[2, 2]],
            ]
        )
        / 3.0
    )
    vals, vecs = np.linalg.eigh(k)
    q = vecs[[3, 0, 1, 2], np.argmax(vals)]
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


# --------------------------------------------------------------------------
# scene initialization
# --------------------------------------------------------------------------

INIT_OPACITY = 0.1
FALLBACK_SCALE = 0.1


def init_scene(
    manifest: DatasetManifest,
    sh_degree: int = 3,
    seed: int = 0,
    hidden_width: int = 64,
    tone_domain: str = "log",
    sh_bias: float = 0.0,
    sh_bias_learnable: bool = False,
    random_fallback_points: int = 0,
) -> DdrScene:
    """One Gaussian per sparse point; isotropic scale from the mean distance
    to the 3 nearest neighbors, opacity 0.1, HDR color starting at (1,1,1)."""
    pts = manifest.sparse_points
    if pts.shape[0] == 0:
        if random_fallback_points <= 0:
            raise SceneIoError(
                "manifest has no sparse points; pass random_fallback_points to "
                "initialize from a random cube instead"
            )
        rng_fb = np.random.default_rng(seed)
        pts = rng_fb.uniform(-1.0, 1.0, (random_fallback_points, 3))
    n = pts.shape[0]
    from . import sh as sh_mod

    if n >= 2:
        k = min(4, n)
        dist, _ = cKDTree(pts).query(pts, k=k)
        mean_nn = dist[:, 1:].mean(axis=1)  # column 0 is the point itself
        mean_nn = np.maximum(mean_nn, 1e-7)
    else:
        mean_nn = np.full(n, FALLBACK_SCALE)
    rng = np.random.default_rng(seed)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    coeffs = np.zeros((n, sh_mod.n_coeffs(sh_degree), 3))
    return DdrScene(
        positions=pts.copy(),
        rotations=rotations,
        log_scales=np.repeat(np.log(mean_nn)[:, None], 3, axis=1),
        opacity_logits=np.full(n, logit(INIT_OPACITY)),
        sh_coeffs=coeffs,
        tone_mapper=ToneMapper.random_init(rng, hidden_width, domain=tone_domain),
        sh_degree=sh_degree,
        sh_bias=sh_bias,
        sh_bias_learnable=sh_bias_learnable,
        background_color=(0.0, 0.0, 0.0),
    )


# --------------------------------------------------------------------------
# synthetic fixture generation
# --------------------------------------------------------------------------

@dataclass
class FixtureSpec:
    n_gaussians: int = 200
    image_size: int = 64
    n_train_views: int = 20
    n_test_views: int = 10
    exposure_levels: tuple = (0.125, 0.5, 2.0, 8.0, 32.0)
    train_exposure_indices: tuple = (0, 2, 4)
    crf: str = "gamma"
    gamma: float = 2.2
    seed: int = 0
    sparse_noise_sigma: float = 0.01
    camera_distance: float = 4.0
    # long focal: the object fills the frame, so no soft silhouette against
    # the background ends up in view (per-point tone mapping and the
    # pixelwise CRF of the targets agree only where coverage saturates)
    focal_factor: float = 4.5
    # camera elevation band (z of the unit view direction); a dome-like band
    # keeps neighboring views close enough for novel-view interpolation
    pose_band: tuple = (0.05, 0.75)
    # radiance bounds of the ground-truth field; widening the range makes
    # tone calibration markedly harder (more clipping, darker shadows)
    field_range: tuple = (0.03, 1.0)


def crf_gamma(x: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    """Closed-form fixture CRF: clip((x)^(1/gamma)) with saturation at 1."""
    return np.clip(np.maximum(np.asarray(x, dtype=np.float64), 0.0) ** (1.0 / gamma), 0.0, 1.0)


def _look_at(position, target, up_hint=(0.0, 1.0, 0.0)) -> np.ndarray:
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - position
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up_hint, dtype=np.float64)
    if abs(fwd @ up) > 0.95:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    ext = np.eye(4)
    ext[:3, :3] = np.stack([right, down, fwd])
    ext[:3, 3] = -ext[:3, :3] @ position
    return ext


def _fibonacci_directions(n: int, band: tuple = (-0.9, 0.9)) -> np.ndarray:
    i = np.arange(n, dtype=np.float64) + 0.5
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    lo, hi = band
    z = hi - (hi - lo) * i / n
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), z, r * np.sin(phi)], axis=1)


def make_ground_truth_scene(spec: FixtureSpec) -> DdrScene:
    """A solid, surface-like object: densely overlapping near-opaque points
    on a sphere shell with a smooth wide-range radiance field.

    Smooth colors and high opacity keep the per-point tone mapping close to
    the pixelwise CRF of the composited image everywhere except silhouettes,
    mirroring how opaque rendered scenes behave.
    """
    from . import sh as sh_mod

    rng = np.random.default_rng(spec.seed)
    n = spec.n_gaussians
    shell_r = 0.7
    # two interleaved shells: the inner one closes the small gaps of the outer
    per_layer = [n - n // 3, n // 3]
    radii = [shell_r, 0.82 * shell_r]
    dirs_parts, pos_parts = [], []
    for count, r in zip(per_layer, radii):
        d = rng.normal(size=(count, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        dirs_parts.append(d)
        pos_parts.append(d * (r + rng.uniform(-0.015, 0.015, count)[:, None]))
    dirs = np.concatenate(dirs_parts)
    positions = np.concatenate(pos_parts)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    # scale ~ neighbor spacing so each shell closes into a solid surface
    spacing = np.sqrt(4.0 * np.pi * shell_r**2 / per_layer[0])
    log_scales = np.log(rng.uniform(0.5 * spacing, 0.7 * spacing, (n, 3)))
    opacity = logit(rng.uniform(0.99, 0.998, n))
    # smooth log-radiance field over the sphere (low-order harmonics), wide
    # dynamic range, small per-point jitter so neighbors blend cleanly
    field = rng.normal(0.0, 1.0, (9, 3)) * np.array([1.2] + [0.75] * 3 + [0.3] * 5)[:, None]
    basis = sh_mod.sh_basis(dirs, 2)
    f_lo, f_hi = spec.field_range
    mid = 0.5 * (np.log(f_lo) + np.log(f_hi))
    log_color = mid + 1.1 * (basis @ field) + rng.uniform(-0.05, 0.05, (n, 3))
    log_color = np.clip(log_color, np.log(f_lo), np.log(f_hi))
    coeffs = np.zeros((n, sh_mod.n_coeffs(1), 3))
    coeffs[:, 0, :] = log_color / sh_mod.C0
    coeffs[:, 1:, :] = rng.uniform(-0.05, 0.05, (n, 3, 3))
    tm = ToneMapper.random_init(rng, 16)
    return DdrScene(
        positions,
        q,
        log_scales,
        opacity,
        coeffs,
        tm,
        sh_degree=1,
        background_color=(0.0, 0.0, 0.0),
    )


def generate_fixture(spec: FixtureSpec, out_dir) -> DatasetManifest:
    """Write a complete synthetic dataset: ground-truth Gaussians rendered to
    HDR targets by this engine's forward rasterizer, LDR targets from the
    closed-form CRF applied to HDR * exposure, noisy sparse points, and
    cameras on a sphere. Same spec + seed produces byte-identical output."""
    if spec.crf != "gamma":
        raise SceneIoError(f"unknown fixture CRF {spec.crf!r}")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "hdr").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed + 1)
    gt = make_ground_truth_scene(spec)

    size = spec.image_size
    f = spec.focal_factor * size
    intr = make_intrinsics(f, f, size / 2.0, size / 2.0)
    levels = [float(t) for t in spec.exposure_levels]
    train_levels = [levels[i] for i in spec.train_exposure_indices]

    n_poses = spec.n_train_views + spec.n_test_views
    cam_dirs = _fibonacci_directions(n_poses, spec.pose_band)
    # held-out poses interleave the training ones across the whole band
    test_ids = set(np.round(np.linspace(0, n_poses - 1, spec.n_test_views)).astype(int))
    views: list[ViewRecord] = []
    train_counter = 0
    for pose_id in range(n_poses):
        position = cam_dirs[pose_id] * spec.camera_distance
        ext = _look_at(position, (0.0, 0.0, 0.0))
        cam = Camera(ext, intr, size, size, 1.0, name=f"pose{pose_id:03d}")
        img_hdr, _ = rasterize_dual(gt, cam, 1.0)
        hdr = img_hdr.pixels
        is_train = pose_id not in test_ids
        tag = "train" if is_train else "test"
        hdr_name = f"hdr/{tag}_{pose_id:03d}.pfm"
        images.write_pfm(hdr.astype(np.float32), out_dir / hdr_name)
        if is_train:
            exposures = [train_levels[train_counter % len(train_levels)]]
            train_counter += 1
        else:
            exposures = levels
        for t in exposures:
            ldr = crf_gamma(hdr * t, spec.gamma)
            img_name = f"images/{tag}_{pose_id:03d}_t{t:g}.png"
            images.write_png(ldr, out_dir / img_name)
            views.append(
                ViewRecord(
                    image_path=img_name,
                    extrinsics=ext,
                    exposure_time=t,
                    split=tag,
                    hdr_path=hdr_name,
                )
            )

    sparse = gt.positions + spec.sparse_noise_sigma * rng.standard_normal(gt.positions.shape)
    manifest = DatasetManifest(
        root=out_dir,
        width=size,
        height=size,
        intrinsics=intr,
        exposure_levels=levels,
        train_exposure_levels=train_levels,
        sfm_exposure=levels[len(levels) // 2],
        sparse_points=sparse,
        views=views,
    )
    save_manifest(manifest, out_dir / "manifest.json")
    manifest.validate()
    return manifest


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def _scene_arrays(scene: DdrScene) -> dict[str, np.ndarray]:
    arrays = {
        "positions": scene.positions,
        "rotations": scene.rotations,
        "log_scales": scene.log_scales,
        "opacity_logits": scene.opacity_logits,
        "sh_coeffs": scene.sh_coeffs,
        "background_color": scene.background_color,
    }
    arrays.update(scene.tone_mapper.params())
    return arrays


def checkpoint_save(scene: DdrScene, path, meta: dict | None = None) -> None:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "sh_degree": scene.sh_degree,
        "sh_bias": scene.sh_bias,
        "sh_bias_learnable": scene.sh_bias_learnable,
        "tone_domain": scene.tone_mapper.domain,
        "hidden_width": scene.tone_mapper.hidden_width,
        "n_gaussians": scene.n_gaussians,
        "meta": meta,
    }
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    hdr_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(hdr_bytes))
    blob += hdr_bytes
    arrays = _scene_arrays(scene)
    blob += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        name_b = name.encode("utf-8")
        blob += struct.pack("<H", len(name_b))
        blob += name_b
        blob += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<I", d)
        payload = arr.tobytes()
        blob += struct.pack("<Q", len(payload))
        blob += payload
    blob += hashlib.sha256(bytes(blob)).digest()
    Path(path).write_bytes(bytes(blob))


def checkpoint_load(path) -> tuple[DdrScene, dict | None]:
    raw = Path(path).read_bytes()
    if len(raw) < 44 or raw[:4] != CHECKPOINT_MAGIC:
        raise SceneIoError(f"{path}: not a DDRS checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise SceneIoError(f"{path}: checkpoint digest mismatch (corrupt or truncated)")
    off = 4
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise SceneIoError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", body, off)
    off += 4
    header = json.loads(body[off : off + hlen].decode("utf-8"))
    off += hlen
    (n_arrays,) = struct.unpack_from("<I", body, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = []
        for _ in range(ndim):
            (d,) = struct.unpack_from("<I", body, off)
            off += 4
            shape.append(d)
        (plen,) = struct.unpack_from("<Q", body, off)
        off += 8
        arrays[name] = np.frombuffer(body[off : off + plen], dtype="<f8").reshape(shape).copy()
        off += plen
    if off != len(body):
        raise SceneIoError(f"{path}: {len(body) - off} trailing bytes in checkpoint")

    from .tonemap import ChannelMlp

    chans = tuple(
        ChannelMlp(
            arrays[f"tm.{c}.w1"], arrays[f"tm.{c}.b1"], arrays[f"tm.{c}.w2"], arrays[f"tm.{c}.b2"]
        )
        for c in ("r", "g", "b")
    )
    tm = ToneMapper(chans, domain=header["tone_domain"])
    scene = DdrScene(
        positions=arrays["positions"],
        rotations=arrays["rotations"],
        log_scales=arrays["log_scales"],
        opacity_logits=arrays["opacity_logits"],
        sh_coeffs=arrays["sh_coeffs"],
        tone_mapper=tm,
        sh_degree=header["sh_degree"],
        sh_bias=header["sh_bias"],
        sh_bias_learnable=header["sh_bias_learnable"],
        background_color=arrays["background_color"],
    )
    return scene, header.get("meta")


def checkpoint_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
