import numpy as np
import pytest

from ddrsplat import sh
from ddrsplat.scene import Camera, DdrScene, make_intrinsics
from ddrsplat.tonemap import ToneMapper


def make_random_scene(
    n=20,
    degree=2,
    seed=3,
    background=(0.0, 0.0, 0.0),
    hidden=16,
    max_opacity_logit=2.0,
    domain="log",
):
    """A generic well-conditioned test scene inside the unit ball."""
    r = np.random.default_rng(seed)
    q = r.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    coeffs = np.concatenate(
        [
            r.uniform(-1.0, 0.5, (n, 1, 3)),
            r.uniform(-0.3, 0.3, (n, sh.n_coeffs(degree) - 1, 3)),
        ],
        axis=1,
    )
    return DdrScene(
        positions=r.uniform(-0.6, 0.6, (n, 3)),
        rotations=q,
        log_scales=r.uniform(np.log(0.03), np.log(0.12), (n, 3)),
        opacity_logits=r.uniform(-1.0, max_opacity_logit, n),
        sh_coeffs=coeffs,
        tone_mapper=ToneMapper.random_init(r, hidden, domain=domain),
        sh_degree=degree,
        background_color=background,
    )


def look_at_camera(position, target=(0.0, 0.0, 0.0), width=32, height=32, focal=40.0, exposure=1.0):
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - position
    fwd /= np.linalg.norm(fwd)
    up = np.array([0.0, 1.0, 0.0])
    if abs(fwd @ up) > 0.95:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    ext = np.eye(4)
    ext[:3, :3] = np.stack([right, down, fwd])
    ext[:3, 3] = -ext[:3, :3] @ position
    return Camera(
        ext,
        make_intrinsics(focal, focal, width / 2.0, height / 2.0),
        width,
        height,
        exposure,
    )


@pytest.fixture
def basic_scene():
    return make_random_scene()


@pytest.fixture
def basic_camera():
    return look_at_camera([0.0, 0.3, -3.0], exposure=2.0)
