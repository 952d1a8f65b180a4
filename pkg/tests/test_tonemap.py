import numpy as np
import pytest

from ddrsplat.tonemap import ChannelMlp, ToneMapError, ToneMapper


def make_mapper(seed=0, hidden=16, domain="log"):
    return ToneMapper.random_init(np.random.default_rng(seed), hidden, domain=domain)


def test_zero_final_layer_gives_midgray():
    tm = make_mapper()
    for ch in tm.channels:
        ch.w2[...] = 0.0
        ch.b2[...] = 0.0
    out = tm.tone_map(np.array([0.3, 5.0, 77.0]), 0.25)
    assert np.array_equal(out, np.full(3, 0.5))
    out = tm.tone_map_linear(np.array([0.3, 5.0, 77.0]), 0.25)
    assert np.array_equal(out, np.full(3, 0.5))


def test_output_strictly_inside_unit_interval():
    tm = make_mapper(1)
    rng = np.random.default_rng(2)
    for _ in range(200):
        c = np.exp(rng.uniform(-8, 8, 3))
        t = float(np.exp(rng.uniform(-4, 4)))
        y = tm.tone_map(c, t)
        assert np.all(y > 0.0) and np.all(y < 1.0)


def test_exchange_identity_bit_exact():
    # log-domain structure: scaling radiance or exposure by the same factor
    # is one and the same input. Power-of-two factors keep the float
    # products exact, so the outputs are bit-identical.
    tm = make_mapper(3)
    rng = np.random.default_rng(4)
    n = 10_000
    c = np.exp(rng.uniform(-6, 6, (n, 3)))
    t = np.exp(rng.uniform(-3, 4, n))
    k = np.exp2(rng.integers(-10, 11, n).astype(np.float64))
    for i in range(n):
        a = tm.tone_map(k[i] * c[i], t[i])
        b = tm.tone_map(c[i], k[i] * t[i])
        assert np.array_equal(a, b)


def test_exchange_identity_arbitrary_factor_close():
    tm = make_mapper(5)
    rng = np.random.default_rng(6)
    for _ in range(200):
        c = np.exp(rng.uniform(-4, 4, 3))
        t = float(np.exp(rng.uniform(-2, 2)))
        k = float(np.exp(rng.uniform(-2, 2)))
        assert np.allclose(tm.tone_map(k * c, t), tm.tone_map(c, k * t), rtol=1e-12, atol=1e-14)


def test_linear_variant_product_invariance():
    tm = make_mapper(7, domain="linear")
    rng = np.random.default_rng(8)
    for _ in range(100):
        c = np.exp(rng.uniform(-4, 4, 3))
        t = float(np.exp(rng.uniform(-2, 2)))
        assert np.array_equal(tm.tone_map_linear(c * t, 1.0), tm.tone_map_linear(c, t))


def test_non_positive_inputs_rejected():
    tm = make_mapper(9)
    with pytest.raises(ToneMapError):
        tm.tone_map(np.array([1.0, -0.1, 1.0]), 1.0)
    with pytest.raises(ToneMapError):
        tm.tone_map(np.array([1.0, 1.0, 1.0]), 0.0)
    with pytest.raises(ToneMapError):
        tm.tone_map(np.array([1.0, 1.0, np.inf]), 1.0)


def test_channel_independence():
    tm = make_mapper(10)
    x = np.array([0.2, -1.0, 0.7])
    before = tm.forward_inputs(x)
    tm.channels[0].w1 += 0.5
    tm.channels[0].b2 += 0.25
    after = tm.forward_inputs(x)
    assert after[0] != before[0]
    assert after[1] == before[1] and after[2] == before[2]


def test_grad_zero_first_layer():
    tm = make_mapper(11)
    for ch in tm.channels:
        ch.w1[...] = 0.0
    dx, _ = tm.tone_map_grad(np.array([0.3, 0.4, 0.5]), np.ones(3))
    assert np.all(dx == 0.0)


def test_grad_matches_finite_differences():
    tm = make_mapper(12)
    rng = np.random.default_rng(13)
    x = rng.normal(size=3)
    up = rng.normal(size=3)
    dx, grads = tm.tone_map_grad(x, up)
    h = 1e-5

    def f(inputs):
        return float(np.dot(tm.forward_inputs(inputs), up))

    for c in range(3):
        xp = x.copy()
        xp[c] += h
        xm = x.copy()
        xm[c] -= h
        fd = (f(xp) - f(xm)) / (2 * h)
        assert abs(fd - dx[c]) / max(abs(fd), abs(dx[c]), 1e-12) < 1e-6

    for name, g in grads.items():
        _, chan, attr = name.split(".")
        ch = tm.channels[{"r": 0, "g": 1, "b": 2}[chan]]
        arr = getattr(ch, attr)
        g = np.asarray(g)
        for i in range(min(4, g.size)):
            orig = arr.flat[i]
            arr.flat[i] = orig + h
            fp = f(x)
            arr.flat[i] = orig - h
            fm = f(x)
            arr.flat[i] = orig
            fd = (fp - fm) / (2 * h)
            an = g.flat[i]
            assert abs(fd - an) / max(abs(fd), abs(an), 1e-12) < 1e-6, name


def test_param_grads_sum_linearly_over_batch():
    tm = make_mapper(14)
    rng = np.random.default_rng(15)
    x = rng.normal(size=(6, 3))
    up = rng.normal(size=(6, 3))
    _, g_all = tm.backward_inputs(x, up)
    g_sum = {k: np.zeros_like(v) for k, v in g_all.items()}
    for i in range(6):
        _, gi = tm.backward_inputs(x[i], up[i])
        for k in g_sum:
            g_sum[k] += gi[k]
    for k in g_all:
        assert np.allclose(g_all[k], g_sum[k], rtol=1e-12, atol=1e-12)


def test_duplicated_inputs_double_param_grads():
    tm = make_mapper(16)
    x = np.array([[0.5, -0.3, 1.2]])
    up = np.ones((1, 3))
    _, g1 = tm.backward_inputs(x, up)
    _, g2 = tm.backward_inputs(np.repeat(x, 2, axis=0), np.repeat(up, 2, axis=0))
    for k in g1:
        assert np.allclose(g2[k], 2.0 * g1[k], rtol=1e-14)


def test_channel_head_shape_validation():
    with pytest.raises(ToneMapError):
        ToneMapper((ChannelMlp(np.zeros(4), np.zeros(4), np.zeros(4), 0.0),) * 2)
    with pytest.raises(ToneMapError):
        make_mapper(domain="gamma")


def test_log_floor_guards_underflow():
    tm = make_mapper(17)
    out = tm.tone_map(np.full(3, 1e-300), 1e-300)
    assert np.all(np.isfinite(out))
