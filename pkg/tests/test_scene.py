import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddrsplat.scene import (
    Camera,
    DdrGaussian,
    DdrScene,
    GradientSet,
    SceneError,
    build_covariance,
    logit,
    make_intrinsics,
    quat_to_rotmat,
    sigmoid,
)
from ddrsplat.tonemap import ToneMapper

from conftest import make_random_scene


def rotation_matrix_oracle(q):
    """Expand a quaternion numerically by rotating the basis vectors."""
    w, x, y, z = q / np.linalg.norm(q)

    def rotate(v):
        # quaternion sandwich product q v q^-1 expanded term by term
        qv = np.array([x, y, z])
        t = 2.0 * np.cross(qv, v)
        return v + w * t + np.cross(qv, t)

    return np.stack([rotate(e) for e in np.eye(3)], axis=1)


def test_covariance_identity():
    cov = build_covariance(np.array([1.0, 0, 0, 0]), np.zeros(3))
    assert np.allclose(cov, np.eye(3), atol=1e-15)


def test_covariance_axis_scales():
    cov = build_covariance(np.array([1.0, 0, 0, 0]), np.array([np.log(2.0), 0.0, 0.0]))
    assert np.allclose(cov, np.diag([4.0, 1.0, 1.0]), atol=1e-14)


def test_covariance_matches_dense_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        ls = rng.uniform(-2.0, 1.0, 3)
        r = rotation_matrix_oracle(q)
        s = np.diag(np.exp(ls))
        ref = r @ s @ s @ r.T
        got = build_covariance(q, ls)
        assert np.max(np.abs(got - ref)) < 1e-10
        assert np.max(np.abs(got - got.T)) < 1e-12


@settings(max_examples=200, deadline=None)
@given(
    q=st.tuples(*[st.floats(-1, 1) for _ in range(4)]).filter(
        lambda t: sum(x * x for x in t) > 1e-4
    ),
    ls=st.tuples(*[st.floats(-3, 2) for _ in range(3)]),
)
def test_covariance_psd_property(q, ls):
    cov = build_covariance(np.array(q), np.array(ls))
    assert np.min(np.linalg.eigvalsh(cov)) >= -1e-10


def test_covariance_psd_bulk():
    rng = np.random.default_rng(1)
    q = rng.normal(size=(10_000, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    ls = rng.uniform(-3.0, 2.0, (10_000, 3))
    from ddrsplat.scene import build_covariances

    covs = build_covariances(q, ls)
    assert np.min(np.linalg.eigvalsh(covs)) >= -1e-10


def test_zero_quaternion_rejected():
    with pytest.raises(SceneError):
        build_covariance(np.zeros(4), np.zeros(3))


def test_parameterization_round_trip():
    rng = np.random.default_rng(2)
    a = rng.uniform(0.01, 0.99, 100)
    assert np.max(np.abs(sigmoid(logit(a)) - a)) < 1e-12
    s = rng.uniform(0.001, 10.0, 100)
    assert np.max(np.abs(np.exp(np.log(s)) - s) / s) < 1e-12


def test_gaussian_validation():
    g = DdrGaussian(
        position=np.zeros(3),
        rotation=np.array([1.0, 0, 0, 0]),
        log_scale=np.zeros(3),
        opacity_logit=0.0,
        sh_coeffs=np.zeros((4, 3)),
    )
    assert g.sh_degree == 1
    assert g.opacity == 0.5
    with pytest.raises(SceneError):
        DdrGaussian(np.zeros(3), np.array([1.0, 0, 0, 0]), np.zeros(3), 0.0, np.zeros((5, 3)))


def test_scene_requires_unit_quaternions():
    scene = make_random_scene(4)
    scene.rotations[0] *= 1.01
    with pytest.raises(SceneError):
        scene.validate()


def test_scene_cap():
    scene = make_random_scene(8)
    with pytest.raises(SceneError):
        scene.validate(max_gaussians=4)


def test_scene_shares_tone_mapper():
    scene = make_random_scene(4)
    params = scene.params()
    assert params["tm.r.w1"] is scene.tone_mapper.channels[0].w1


def test_scene_copy_independent():
    scene = make_random_scene(4)
    dup = scene.copy()
    dup.positions[0, 0] += 1.0
    dup.tone_mapper.channels[0].w1[0] += 1.0
    assert scene.positions[0, 0] != dup.positions[0, 0]
    assert scene.tone_mapper.channels[0].w1[0] != dup.tone_mapper.channels[0].w1[0]


def test_camera_validation():
    intr = make_intrinsics(40.0, 40.0, 16.0, 16.0)
    ext = np.eye(4)
    cam = Camera(ext, intr, 32, 32, 1.0)
    assert np.allclose(cam.position, 0.0)
    with pytest.raises(SceneError):
        Camera(ext, intr, 32, 32, 0.0)  # exposure must be positive
    bad = ext.copy()
    bad[:3, :3] *= 1.001
    with pytest.raises(SceneError):
        Camera(bad, intr, 32, 32, 1.0)
    mirror = np.diag([-1.0, 1.0, 1.0, 1.0])
    with pytest.raises(SceneError):
        Camera(mirror, intr, 32, 32, 1.0)
    skew = intr.copy()
    skew[0, 1] = 0.5
    with pytest.raises(SceneError):
        Camera(ext, skew, 32, 32, 1.0)


def test_quat_to_rotmat_orthonormal():
    rng = np.random.default_rng(3)
    q = rng.normal(size=(100, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    r = quat_to_rotmat(q)
    eye = np.einsum("nij,nkj->nik", r, r)
    assert np.max(np.abs(eye - np.eye(3))) < 1e-12
    assert np.allclose(np.linalg.det(r), 1.0)


def test_gradient_set_mirrors_scene():
    scene = make_random_scene(5)
    g = GradientSet.zeros_for(scene)
    for key, arr in scene.params().items():
        assert g[key].shape == arr.shape
    g.data["positions"] += 1.0
    h = GradientSet.zeros_for(scene)
    h.add(g, scale=2.0)
    assert np.all(h["positions"] == 2.0)
    assert h.max_abs() == 2.0
    g.data["positions"][0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        g.assert_finite()


def test_from_gaussians_round_trip():
    scene = make_random_scene(6)
    rebuilt = DdrScene.from_gaussians(
        list(scene),
        scene.tone_mapper.copy(),
        sh_degree=scene.sh_degree,
        background_color=scene.background_color,
    )
    assert np.array_equal(rebuilt.positions, scene.positions)
    assert np.array_equal(rebuilt.sh_coeffs, scene.sh_coeffs)
