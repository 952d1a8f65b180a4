import numpy as np
import pytest

from ddrsplat import sh

from oracles import real_sh_from_scipy


def random_dirs(n, seed=0):
    r = np.random.default_rng(seed)
    d = r.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_constant_band():
    d = random_dirs(5)
    coeffs = np.zeros((1, 3))
    coeffs[0] = (1.0, 2.0, -0.5)
    for i in range(5):
        out = sh.eval_sh(d[i], coeffs, 0)
        assert np.allclose(out, np.array([1.0, 2.0, -0.5]) / (2.0 * np.sqrt(np.pi)), atol=1e-15)


def test_zero_coeffs():
    d = random_dirs(3)
    out = sh.eval_sh(d[0], np.zeros((16, 3)), 3)
    assert np.all(out == 0.0)


def test_degree_mismatch_rejected():
    with pytest.raises(ValueError):
        sh.eval_sh(np.array([0.0, 0.0, 1.0]), np.zeros((9, 3)), 3)


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_basis_matches_scipy_real_sh(degree):
    dirs = random_dirs(64, seed=degree)
    basis = sh.sh_basis(dirs, degree)
    b = 0
    for l in range(degree + 1):
        for m in range(-l, l + 1):
            ref = real_sh_from_scipy(l, m, dirs)
            assert np.max(np.abs(basis[:, b] - ref)) < 1e-12, (l, m)
            b += 1


def test_closed_form_at_z_axis():
    # direction (0,0,1): only the m=0 basis functions are nonzero
    d = np.array([0.0, 0.0, 1.0])
    basis = sh.sh_basis(d, 2)
    rng = np.random.default_rng(11)
    coeffs = rng.normal(size=(9, 3))
    got = sh.eval_sh(d, coeffs, 2)
    expected = (
        sh.C0 * coeffs[0]
        + sh.C1 * coeffs[2]
        + sh.C2[2] * 2.0 * coeffs[6]
    )
    assert np.max(np.abs(got - expected)) < 1e-12
    nonzero = np.nonzero(np.abs(basis) > 0)[0]
    assert set(nonzero) <= {0, 2, 6}


def test_hdr_color_positive_and_exp():
    dirs = random_dirs(50, seed=4)
    rng = np.random.default_rng(5)
    coeffs = rng.normal(size=(16, 3))
    for i in range(10):
        c = sh.hdr_color(dirs[i], coeffs, 3)
        assert np.all(c > 0.0)
        assert np.allclose(c, np.exp(sh.eval_sh(dirs[i], coeffs, 3)), rtol=1e-15)
    assert np.allclose(sh.hdr_color(dirs[0], np.zeros((4, 3)), 1), 1.0)
    k0 = np.array([[np.log(2.0), 0.0, -np.log(2.0)]]) / sh.C0
    assert np.allclose(sh.hdr_color(dirs[1], k0, 0), (2.0, 1.0, 0.5), atol=1e-14)


def test_degree0_direction_independent():
    coeffs = np.array([[0.3, -0.2, 0.9]])
    d = random_dirs(20, seed=6)
    vals = np.stack([sh.hdr_color(d[i], coeffs, 0) for i in range(20)])
    assert np.all(vals == vals[0])


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_basis_grad_matches_fd(degree):
    dirs = random_dirs(16, seed=degree + 20)
    grad = sh.sh_basis_grad(dirs, degree)
    h = 1e-6
    for axis in range(3):
        dp = dirs.copy()
        dp[:, axis] += h
        dm = dirs.copy()
        dm[:, axis] -= h
        fd = (sh.sh_basis(dp, degree) - sh.sh_basis(dm, degree)) / (2 * h)
        assert np.max(np.abs(fd - grad[:, :, axis])) < 1e-8
