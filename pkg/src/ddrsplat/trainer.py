"""Training loop: Adam with per-class learning rates, exponential decay for
positions and the tone-mapper, SH-degree warmup, and adaptive density
control (clone small / split large / prune transparent points).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .losses import LossConfig, loss_total
from .metrics import evaluate_split
from .scene import DdrScene, GradientSet, logit
from .sceneio import DatasetManifest, init_scene

OPACITY_RESET_VALUE = 0.01


class TrainerError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 30000
    seed: int = 0
    # Adam
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    # learning rates; positions and tone-mapper decay exponentially
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_sh: float = 2.5e-3
    lr_sh_rest_factor: float = 0.05  # higher SH bands train at lr_sh/20
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_tonemapper: float = 5e-4
    lr_tonemapper_final: float = 5e-5
    # loss
    lambda_dssim: float = 0.2
    gamma_hdr: float | None = None  # None: 0.6 when HDR targets exist, else 0
    mu_compression: float = 5000.0
    norm_epsilon: float = 1e-8
    # density control
    densify_from: int = 500
    densify_interval: int = 100
    densify_until: int = 15000
    grad_threshold: float = 2e-4
    densify_size_threshold: float | None = None  # None: 1% of scene extent
    opacity_prune_threshold: float = 5e-3
    opacity_reset_interval: int = 3000
    max_gaussians: int = 200000
    split_scale_shrink: float = 1.6
    # model
    sh_degree: int = 3
    sh_warmup_interval: int = 1000  # iterations per additional SH band
    tone_hidden: int = 64
    tone_domain: str = "log"
    # machinery
    batch_size: int = 1
    tile_size: int = 16
    eval_interval: int = 1000
    log_interval: int = 10

    def __post_init__(self):
        if self.iterations < 0:
            raise TrainerError("iterations must be >= 0")
        for name in (
            "lr_position",
            "lr_position_final",
            "lr_sh",
            "lr_opacity",
            "lr_scale",
            "lr_rotation",
            "lr_tonemapper",
            "lr_tonemapper_final",
        ):
            if getattr(self, name) <= 0:
                raise TrainerError(f"{name} must be > 0")
        if self.tone_domain not in ("log", "linear"):
            raise TrainerError(f"unknown tone_domain {self.tone_domain!r}")
        if self.max_gaussians < 1:
            raise TrainerError("max_gaussians must be >= 1")


def lr_schedule(iteration: int, lr_init: float, lr_final: float, total_iters: int) -> float:
    """Exponential decay hitting lr_init at 0 and lr_final at total_iters."""
    if total_iters <= 0:
        return lr_init
    t = min(max(iteration, 0), total_iters) / total_iters
    return lr_init * (lr_final / lr_init) ** t


class AdamState:
    """First/second moments per parameter class plus the shared step count."""

    def __init__(self, scene: DdrScene):
        params = scene.params()
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def filter_rows(self, key: str, keep: np.ndarray) -> None:
        self.m[key] = self.m[key][keep]
        self.v[key] = self.v[key][keep]

    def append_rows(self, key: str, n_new: int) -> None:
        pad = (n_new,) + self.m[key].shape[1:]
        self.m[key] = np.concatenate([self.m[key], np.zeros(pad)])
        self.v[key] = np.concatenate([self.v[key], np.zeros(pad)])

    def reset(self, key: str) -> None:
        self.m[key][...] = 0.0
        self.v[key][...] = 0.0


def _lr_for(key: str, cfg: TrainConfig, iteration: int) -> float:
    if key == "positions":
        return lr_schedule(iteration, cfg.lr_position, cfg.lr_position_final, cfg.iterations)
    if key == "sh_coeffs":
        return cfg.lr_sh
    if key == "opacity_logits":
        return cfg.lr_opacity
    if key == "log_scales":
        return cfg.lr_scale
    if key == "rotations":
        return cfg.lr_rotation
    # tone-mapper weights and the optional learnable bias share one schedule
    return lr_schedule(iteration, cfg.lr_tonemapper, cfg.lr_tonemapper_final, cfg.iterations)


def adam_step(
    scene: DdrScene,
    grads: GradientSet,
    state: AdamState,
    cfg: TrainConfig,
    iteration: int,
) -> None:
    """Bias-corrected Adam update in place; quaternions renormalized after."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    params = scene.params()
    for key, p in params.items():
        g = grads[key]
        if not np.all(np.isfinite(g)):
            raise TrainerError(f"non-finite gradient in {key} at iteration {iteration}")
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        lr = _lr_for(key, cfg, iteration)
        update = (lr / bc1) * m / (np.sqrt(v / bc2) + cfg.adam_eps)
        if key == "sh_coeffs":
            update[:, 1:, :] *= cfg.lr_sh_rest_factor
        scene.set_param(key, p - update)
    scene.normalize_rotations()


@dataclass
class DensifyStats:
    accum: np.ndarray
    count: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(np.zeros(n), np.zeros(n))


def density_control(
    scene: DdrScene,
    stats: DensifyStats,
    cfg: TrainConfig,
    state: AdamState,
    rng: np.random.Generator,
    size_threshold: float,
) -> DensifyStats:
    """Clone small / split large points whose mean screen-space position
    gradient exceeds the threshold; prune nearly transparent points.
    Returns fresh gradient statistics sized to the mutated scene."""
    n = scene.n_gaussians
    mean_grad = stats.accum / np.maximum(stats.count, 1.0)
    alive = scene.opacities() >= cfg.opacity_prune_threshold
    if not alive.any():
        alive[int(np.argmax(scene.opacities()))] = True  # scenes never go empty
    candidate = (mean_grad > cfg.grad_threshold) & alive
    max_scale = np.exp(scene.log_scales).max(axis=1)
    clone_mask = candidate & (max_scale <= size_threshold)
    split_mask = candidate & (max_scale > size_threshold)

    budget = cfg.max_gaussians - int(alive.sum())
    n_grow = int(clone_mask.sum() + split_mask.sum())  # each adds one net point
    if n_grow > max(budget, 0):
        # keep the highest-gradient candidates within the cap
        cand_idx = np.nonzero(clone_mask | split_mask)[0]
        order = cand_idx[np.argsort(-mean_grad[cand_idx], kind="stable")]
        drop = order[max(budget, 0) :]
        clone_mask[drop] = False
        split_mask[drop] = False

    keep = alive & ~split_mask  # split parents are replaced by their children
    clone_idx = np.nonzero(clone_mask & keep)[0]
    split_idx = np.nonzero(split_mask & alive)[0]

    parts = {
        "positions": [scene.positions[keep], scene.positions[clone_idx]],
        "rotations": [scene.rotations[keep], scene.rotations[clone_idx]],
        "log_scales": [scene.log_scales[keep], scene.log_scales[clone_idx]],
        "opacity_logits": [scene.opacity_logits[keep], scene.opacity_logits[clone_idx]],
        "sh_coeffs": [scene.sh_coeffs[keep], scene.sh_coeffs[clone_idx]],
    }
    if split_idx.size:
        from .scene import quat_to_rotmat

        rot = quat_to_rotmat(scene.rotations[split_idx])
        sigma = np.exp(scene.log_scales[split_idx])
        child_ls = scene.log_scales[split_idx] - np.log(cfg.split_scale_shrink)
        for _ in range(2):
            eps = rng.standard_normal((split_idx.size, 3))
            offs = np.einsum("nij,nj->ni", rot, sigma * eps)
            parts["positions"].append(scene.positions[split_idx] + offs)
            parts["rotations"].append(scene.rotations[split_idx])
            parts["log_scales"].append(child_ls)
            parts["opacity_logits"].append(scene.opacity_logits[split_idx])
            parts["sh_coeffs"].append(scene.sh_coeffs[split_idx])

    n_new = clone_idx.size + 2 * split_idx.size
    for key, chunks in parts.items():
        setattr(scene, key, np.ascontiguousarray(np.concatenate(chunks)))
        state.filter_rows(key, keep)
        state.append_rows(key, n_new)
    scene.validate(max_gaussians=cfg.max_gaussians)
    return DensifyStats.zeros(scene.n_gaussians)


def reset_opacity(scene: DdrScene, state: AdamState) -> None:
    cap = logit(OPACITY_RESET_VALUE)
    scene.opacity_logits[...] = np.minimum(scene.opacity_logits, cap)
    state.reset("opacity_logits")


@dataclass
class TrainView:
    camera: object
    target_ldr: np.ndarray
    target_hdr: np.ndarray | None


@dataclass
class TrainResult:
    scene: DdrScene
    records: list[dict] = field(default_factory=list)


def _load_views(manifest: DatasetManifest, split: str) -> list[TrainView]:
    out = []
    for i in manifest.view_indices(split):
        out.append(TrainView(manifest.camera(i), manifest.image(i), manifest.hdr_target(i)))
    return out


def _scene_extent(manifest: DatasetManifest) -> float:
    pts = manifest.sparse_points
    if pts.shape[0] == 0:
        return 1.0
    center = pts.mean(axis=0)
    return float(np.linalg.norm(pts - center, axis=1).max()) or 1.0


def train(
    manifest: DatasetManifest,
    cfg: TrainConfig,
    *,
    scene: DdrScene | None = None,
    log_sink=None,
) -> TrainResult:
    """Optimize a scene against the manifest's training views.

    log_sink, when given, receives each metrics record (a dict) as it is
    produced. Fixed seed + config + thread count reproduce the run exactly
    (wall-clock elapsed_s aside).
    """
    train_views = _load_views(manifest, "train")
    if not train_views:
        raise TrainerError("dataset has no training views")
    exposures = sorted({v.camera.exposure_time for v in train_views})
    if len(exposures) < 2:
        warnings.warn(
            "training with a single exposure time: the tone curve is unconstrained "
            "across exposures and HDR reconstruction will be poor",
            stacklevel=2,
        )

    have_hdr = all(v.target_hdr is not None for v in train_views)
    gamma = cfg.gamma_hdr if cfg.gamma_hdr is not None else (0.6 if have_hdr else 0.0)
    if gamma > 0.0 and not have_hdr:
        raise TrainerError("gamma_hdr > 0 but the dataset lacks HDR targets on training views")
    loss_cfg = LossConfig(
        lambda_dssim=cfg.lambda_dssim,
        gamma_hdr=gamma,
        mu_compression=cfg.mu_compression,
        norm_epsilon=cfg.norm_epsilon,
    )

    if scene is None:
        scene = init_scene(
            manifest,
            sh_degree=cfg.sh_degree,
            seed=cfg.seed,
            hidden_width=cfg.tone_hidden,
            tone_domain=cfg.tone_domain,
        )
    scene.validate(max_gaussians=cfg.max_gaussians)

    size_threshold = cfg.densify_size_threshold
    if size_threshold is None:
        size_threshold = 0.01 * _scene_extent(manifest)

    seq = np.random.SeedSequence(cfg.seed)
    rng_views, rng_density = (np.random.default_rng(s) for s in seq.spawn(2))
    state = AdamState(scene)
    stats = DensifyStats.zeros(scene.n_gaussians)
    result = TrainResult(scene=scene)
    t_start = time.perf_counter()

    def emit(record):
        result.records.append(record)
        if log_sink is not None:
            log_sink(record)

    def evaluate(iteration, loss_p, loss_c):
        report = evaluate_split(scene, manifest, "test", mu=cfg.mu_compression, tile_size=cfg.tile_size)
        groups = report["groups"]
        ldr_scores = [
            groups[g]["psnr_mean"] for g in ("ldr_oe", "ldr_ne") if groups[g]["n_views"] > 0
        ]
        psnr_ldr = float(np.mean(ldr_scores)) if ldr_scores else None
        psnr_hdr = groups["hdr"]["psnr_mean"] if groups["hdr"]["n_views"] > 0 else None
        emit(
            {
                "iter": iteration,
                "loss_p": loss_p,
                "loss_c": loss_c,
                "psnr_ldr": psnr_ldr,
                "psnr_hdr": psnr_hdr,
                "n_gaussians": scene.n_gaussians,
                "elapsed_s": time.perf_counter() - t_start,
            }
        )

    for it in range(cfg.iterations):
        degree = min(cfg.sh_degree, it // cfg.sh_warmup_interval) if cfg.sh_warmup_interval > 0 else cfg.sh_degree
        picks = rng_views.integers(len(train_views), size=cfg.batch_size)
        batch = [train_views[int(i)] for i in picks]
        loss, grads, parts = loss_total(
            scene,
            [(v.camera, v.target_ldr, v.target_hdr) for v in batch],
            loss_cfg,
            tile_size=cfg.tile_size,
            active_sh_degree=degree,
            screen_grad_accum=stats.accum,
            screen_grad_count=stats.count,
        )
        try:
            adam_step(scene, grads, state, cfg, it)
        except TrainerError as e:
            raise TrainerError(f"{e} (iteration {it})") from e

        if (
            cfg.densify_interval > 0
            and cfg.densify_from <= it <= cfg.densify_until
            and it > 0
            and it % cfg.densify_interval == 0
        ):
            stats = density_control(scene, stats, cfg, state, rng_density, size_threshold)
        if cfg.opacity_reset_interval > 0 and it > 0 and it % cfg.opacity_reset_interval == 0:
            reset_opacity(scene, state)

        last = it == cfg.iterations - 1
        if cfg.eval_interval > 0 and (it % cfg.eval_interval == 0 or last):
            evaluate(it, parts["loss_p"], parts["loss_c"])
        elif cfg.log_interval > 0 and it % cfg.log_interval == 0:
            emit(
                {
                    "iter": it,
                    "loss_p": parts["loss_p"],
                    "loss_c": parts["loss_c"],
                    "psnr_ldr": None,
                    "psnr_hdr": None,
                    "n_gaussians": scene.n_gaussians,
                    "elapsed_s": time.perf_counter() - t_start,
                }
            )

    if cfg.iterations == 0 and cfg.eval_interval > 0:
        evaluate(0, None, None)
    return result


def checkpoint_meta(manifest: DatasetManifest, cfg: TrainConfig) -> dict:
    """Dataset facts embedded in the checkpoint so render/serve can work
    without the dataset: image size, exposure range, training-pose presets."""
    train_idx = manifest.view_indices("train")
    exposures = [manifest.views[i].exposure_time for i in train_idx]
    return {
        "width": manifest.width,
        "height": manifest.height,
        "intrinsics": manifest.intrinsics.tolist(),
        "exposure_levels": list(manifest.exposure_levels),
        "train_exposure_levels": list(manifest.train_exposure_levels),
        "exposure_range": [min(exposures), max(exposures)],
        "camera_presets": [
            {
                "name": manifest.views[i].image_path,
                "extrinsics": manifest.views[i].extrinsics.reshape(-1).tolist(),
                "exposure_time": manifest.views[i].exposure_time,
            }
            for i in train_idx
        ],
        "mu_compression": cfg.mu_compression,
    }
