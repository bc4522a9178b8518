import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from climrt import climnet as cn
from climrt import tensor as T
from climrt.tensor import DimensionError, GeometryError, Tensor


@pytest.fixture(autouse=True)
def f64():
    with T.precision(np.float64):
        yield


def t(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def ghost(rng, c_in, c_out):
    k = -(-c_out // 2)
    return cn.GhostParams(t(rng.standard_normal((k, c_in, 1, 3, 3))), t(rng.standard_normal((c_out - k, 1, 3, 3))))


def stconv_params(rng, c_in, c_out):
    return cn.STConvParams(ghost(rng, c_in, c_out), t(rng.standard_normal((c_out, c_out, 3, 1, 1))))


def zero_like_tree(p):
    from climrt.params import map_tensors

    return map_tensors(p, lambda x: t(np.zeros(x.shape)))


def ghost_oracle(x, p):
    intrinsic = oracles.conv3d(x, p.primary.data, padding=(0, 1, 1))
    mapped = [oracles.conv3d(intrinsic[j : j + 1], p.cheap.data[j][None, None], padding=(0, 1, 1))[0] for j in range(p.cheap.shape[0])]
    return np.concatenate([intrinsic] + ([np.stack(mapped)] if mapped else []))


def stconv_oracle(x, p):
    return oracles.conv3d(ghost_oracle(x, p.ghost), p.temporal.data, padding=(1, 0, 0))


# ---------------------------------------------------------------- ghost / stconv


@pytest.mark.trivial
def test_ghost_channel_bookkeeping(rng):
    p = ghost(rng, 3, 8)
    assert p.primary.shape[0] == 4 and p.cheap.shape[0] == 4
    out = cn.ghost_spatial_conv(t(rng.standard_normal((3, 2, 6, 6))), p)
    assert out.shape == (8, 2, 6, 6)


@pytest.mark.trivial
def test_ghost_zero_cheap_map(rng):
    p = ghost(rng, 3, 8)
    p.cheap = t(np.zeros(p.cheap.shape))
    x = t(rng.standard_normal((3, 2, 5, 5)))
    out = cn.ghost_spatial_conv(x, p).data
    np.testing.assert_array_equal(out[4:], 0.0)
    np.testing.assert_array_equal(out[:4], T.conv_spatial(x, p.primary, padding=(1, 1)).data)


def test_ghost_uses_fewer_macs_than_plain_conv(rng):
    x = t(rng.standard_normal((8, 2, 12, 12)))
    p = ghost(rng, 8, 16)
    plain = t(rng.standard_normal((16, 8, 1, 3, 3)))
    with T.count_macs() as g:
        cn.ghost_spatial_conv(x, p)
    with T.count_macs() as d:
        T.conv_spatial(x, plain, padding=(1, 1))
    assert 0 < g.macs < d.macs


@pytest.mark.trivial
def test_stconv_delta_kernels_identity(rng):
    # Ghost keeps only ceil(C/2) intrinsic channels, so an exact identity exists for C = 1.
    primary = np.zeros((1, 1, 1, 3, 3))
    primary[0, 0, 0, 1, 1] = 1.0
    temporal = np.zeros((1, 1, 3, 1, 1))
    temporal[0, 0, 1] = 1.0
    p = cn.STConvParams(cn.GhostParams(t(primary), t(np.zeros((0, 1, 3, 3)))), t(temporal))
    x = rng.standard_normal((1, 3, 5, 5))
    np.testing.assert_array_equal(cn.stconv(t(x), p).data, x)


@pytest.mark.trivial
def test_stconv_single_time_step_is_scaled_copy(rng):
    p = stconv_params(rng, 2, 2)
    x = t(rng.standard_normal((2, 1, 4, 4)))
    out = cn.stconv(x, p)
    assert out.shape == (2, 1, 4, 4)
    g = cn.ghost_spatial_conv(x, p.ghost).data
    expect = np.einsum("oi,ithw->othw", p.temporal.data[:, :, 1, 0, 0], g)
    np.testing.assert_allclose(out.data, expect, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_stconv_matches_sequential_oracles(seed):
    rng = np.random.default_rng(seed)
    c_in, c_out = rng.integers(1, 4), rng.integers(1, 5)
    p = stconv_params(rng, c_in, c_out)
    x = rng.standard_normal((c_in, 2, 5, 4))
    np.testing.assert_allclose(cn.stconv(t(x), p).data, stconv_oracle(x, p), atol=1e-10)


# ---------------------------------------------------------------- gstc


@pytest.mark.trivial
def test_gstc_zero_branch_is_identity(rng):
    p = zero_like_tree(cn.GstcBlockParams(stconv_params(rng, 4, 4), stconv_params(rng, 4, 4)))
    x = rng.standard_normal((4, 2, 6, 6))
    np.testing.assert_array_equal(cn.gstc_block(t(x), p).data, x)


@pytest.mark.trivial
def test_gstc_stride_two_halves_space(rng):
    p = cn.GstcBlockParams(stconv_params(rng, 3, 4), stconv_params(rng, 4, 4), t(rng.standard_normal((4, 3, 1, 1, 1))), stride=2)
    assert cn.gstc_block(t(rng.standard_normal((3, 2, 16, 16))), p).shape == (4, 2, 8, 8)


@pytest.mark.parametrize("seed", range(10))
def test_gstc_residual_structure(seed):
    rng = np.random.default_rng(seed)
    p = cn.GstcBlockParams(stconv_params(rng, 3, 4), stconv_params(rng, 4, 4), t(rng.standard_normal((4, 3, 1, 1, 1))), stride=2)
    x = rng.standard_normal((3, 2, 8, 8))
    short = oracles.conv3d(x, p.shortcut.data, stride=(1, 2, 2))
    h = np.maximum(cn.stconv(t(x), p.conv1, 2).data, 0.0)
    branch = stconv_oracle(h, p.conv2)
    np.testing.assert_allclose(cn.gstc_block(t(x), p).data - short, branch, atol=1e-9)


def test_gstc_shape_mismatch_raises(rng):
    p = cn.GstcBlockParams(stconv_params(rng, 3, 4), stconv_params(rng, 4, 4))
    with pytest.raises(DimensionError):
        cn.gstc_block(t(rng.standard_normal((3, 2, 4, 4))), p)


@given(st.integers(1, 4), st.integers(1, 3), st.integers(2, 6), st.integers(0, 10_000))
def test_zero_residual_identity_property(c, time, size, seed):
    rng = np.random.default_rng(seed)
    p = zero_like_tree(cn.GstcBlockParams(stconv_params(rng, c, c), stconv_params(rng, c, c)))
    x = rng.standard_normal((c, time, size, size))
    np.testing.assert_array_equal(cn.gstc_block(t(x), p).data, x)


# ---------------------------------------------------------------- gate / ms fusion


@pytest.mark.trivial
def test_gate_zero_weights_halves(rng):
    x = rng.standard_normal((3, 2, 4, 4))
    out = cn.feature_gate(t(x), cn.GateParams(t(np.zeros((3, 3))), t(np.zeros(3))))
    np.testing.assert_allclose(out.data, 0.5 * x, atol=1e-12)


@pytest.mark.trivial
def test_gate_saturated_bias_passes_through(rng):
    x = rng.uniform(-3, 3, (3, 2, 4, 4))
    out = cn.feature_gate(t(x), cn.GateParams(t(np.zeros((3, 3))), t(np.full(3, 16.0))))
    np.testing.assert_allclose(out.data, x, atol=1e-6)


@pytest.mark.parametrize("seed", range(20))
def test_gate_matches_pool_then_scale(seed):
    rng = np.random.default_rng(seed)
    c = rng.integers(1, 5)
    x = rng.standard_normal((c, 2, 3, 5))
    w, b = rng.standard_normal((c, c)), rng.standard_normal(c)
    coef = sig(w @ x.mean(axis=(1, 2, 3)) + b)
    out = cn.feature_gate(t(x), cn.GateParams(t(w), t(b)))
    np.testing.assert_allclose(out.data, coef[:, None, None, None] * x, atol=1e-12)


def test_gate_channel_mismatch(rng):
    with pytest.raises(DimensionError):
        cn.feature_gate(t(rng.standard_normal((3, 1, 2, 2))), cn.GateParams(t(np.zeros((2, 2))), t(np.zeros(2))))


def ms_params(rng, c_in, c_out):
    return cn.MsFusionParams(
        t(rng.standard_normal((c_in, c_out, 1, 2, 2))), t(rng.standard_normal(c_out)), t(rng.standard_normal((c_out, c_in))), t(rng.standard_normal(c_out))
    )


@pytest.mark.trivial
def test_ms_fusion_zero_modulation(rng):
    p = ms_params(rng, 3, 2)
    p.mod_weight, p.mod_bias = t(np.zeros((2, 3))), t(np.zeros(2))
    x = t(rng.standard_normal((3, 2, 4, 4)))
    up = np.maximum(T.conv_transpose3d(x, p.up, stride=(1, 2, 2), bias=p.up_bias).data, 0)
    out = cn.ms_fusion(x, p)
    assert out.shape == (2, 2, 8, 8)
    np.testing.assert_allclose(out.data, 0.5 * up, atol=1e-12)


@pytest.mark.trivial
def test_ms_fusion_negative_input_identity_tap_is_zero(rng):
    k = np.zeros((2, 2, 1, 2, 2))
    k[0, 0, 0, 0, 0] = k[1, 1, 0, 0, 0] = 1.0
    p = cn.MsFusionParams(t(k), t(np.zeros(2)), t(rng.standard_normal((2, 2))), t(np.zeros(2)))
    out = cn.ms_fusion(t(-rng.uniform(0.1, 1, (2, 2, 3, 3))), p)
    np.testing.assert_array_equal(out.data, 0.0)


@pytest.mark.parametrize("seed", range(20))
def test_ms_fusion_matches_stepwise_oracle(seed):
    rng = np.random.default_rng(seed)
    c_in, c_out = rng.integers(1, 4), rng.integers(1, 4)
    p = ms_params(rng, c_in, c_out)
    x = rng.standard_normal((c_in, 2, 3, 3))
    up = oracles.conv_transpose3d(x, p.up.data, stride=(1, 2, 2)) + p.up_bias.data[:, None, None, None]
    coef = sig(p.mod_weight.data @ x.mean(axis=(1, 2, 3)) + p.mod_bias.data)
    np.testing.assert_allclose(cn.ms_fusion(t(x), p).data, coef[:, None, None, None] * np.maximum(up, 0), atol=1e-10)


# ---------------------------------------------------------------- skip / transform / network


@pytest.mark.trivial
def test_skip_connect_layout(rng):
    d, e = rng.standard_normal((4, 2, 3, 3)), rng.standard_normal((4, 2, 3, 3))
    out = cn.skip_connect(t(d), t(e)).data
    assert out.shape == (8, 2, 3, 3)
    np.testing.assert_array_equal(out[:4], d)
    z = cn.skip_connect(t(d), t(np.zeros_like(e))).data
    np.testing.assert_array_equal(z[4:], 0.0)
    with pytest.raises(DimensionError):
        cn.skip_connect(t(d), t(rng.standard_normal((4, 2, 4, 3))))


def small_net(seed=0, **kw):
    return cn.init_climnet(cn.ClimNetConfig(widths=(4, 4, 8, 8), **kw), seed=seed)


def test_latent_frame_is_input_sized():
    p = small_net()
    rng = np.random.default_rng(0)
    for size in (32, 64):
        a, b = rng.random((3, size, size)), rng.random((3, size, size))
        assert cn.climnet_forward(t(a), t(b), p).shape == (3, size, size)


@pytest.mark.trivial
def test_transform_zero_emit_is_grey(rng):
    p = small_net()
    p.transform.emit = t(np.zeros(p.transform.emit.shape))
    p.transform.emit_bias = t(np.zeros(3))
    out = cn.climnet_forward(t(rng.random((3, 16, 16))), t(rng.random((3, 16, 16))), p)
    np.testing.assert_array_equal(out.data, 0.5)


def test_shape_trace_32x32():
    trace = []
    p = cn.init_climnet(cn.ClimNetConfig(widths=(8, 16, 32, 64)), seed=0)
    x = t(np.zeros((3, 32, 32)))
    cn.climnet_forward(x, x, p, trace)
    shapes = dict(trace)
    assert [shapes[f"encoder{i}"] for i in range(1, 5)] == [(8, 2, 32, 32), (16, 2, 16, 16), (32, 2, 8, 8), (64, 2, 4, 4)]
    # Decoder stage i spatially matches encoder stage 4 - i; channels double via concatenation.
    assert [shapes[f"decoder{i}"] for i in range(1, 4)] == [(64, 2, 8, 8), (32, 2, 16, 16), (16, 2, 32, 32)]
    assert shapes["latent"] == (3, 32, 32)


def test_indivisible_size_raises():
    p = small_net()
    x = t(np.zeros((3, 12, 16)))
    with pytest.raises(GeometryError):
        cn.climnet_forward(x, x, p)
    with pytest.raises(DimensionError):
        cn.climnet_forward(x, t(np.zeros((3, 16, 16))), p)


def test_batched_forward_matches_single(rng):
    p = small_net(gating=True)
    a, b = rng.random((2, 3, 8, 8)), rng.random((2, 3, 8, 8))
    batched = cn.climnet_forward(t(a), t(b), p).data
    for i in range(2):
        np.testing.assert_allclose(batched[i], cn.climnet_forward(t(a[i]), t(b[i]), p).data, atol=1e-12)


@pytest.mark.trivial
@given(st.integers(0, 10_000), st.sampled_from([8, 16]), st.booleans())
def test_output_range_and_size(seed, size, gating):
    rng = np.random.default_rng(seed)
    p = small_net(seed, gating=gating)
    out = cn.climnet_forward(t(rng.random((3, size, size))), t(rng.random((3, size, size))), p).data
    assert out.shape == (3, size, size)
    assert out.min() >= 0.0 and out.max() <= 1.0


# ---------------------------------------------------------------- loss


@pytest.mark.trivial
def test_interframe_loss_examples():
    x = np.random.default_rng(0).random((2, 3, 4, 4))
    assert cn.interframe_loss(t(x), t(x)).item() == 0.0
    truth = np.zeros((1, 3, 4, 4))
    pred = truth.copy()
    pred[0, 1, :2, :2] = 0.5
    assert cn.interframe_loss(t(pred), t(truth)).item() == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(DimensionError):
        cn.interframe_loss(t(pred), t(np.zeros((1, 3, 4, 5))))


@pytest.mark.trivial
def test_interframe_loss_gradient_is_sign_over_n(rng):
    p = Tensor(rng.standard_normal((3, 3, 2, 2)), requires_grad=True)
    truth = rng.standard_normal((3, 3, 2, 2))
    cn.interframe_loss(p, t(truth)).backward()
    np.testing.assert_allclose(p.grad, np.sign(p.data - truth) / 3, atol=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 3))
def test_interframe_loss_non_negative(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((n, 3, 2, 2)), rng.standard_normal((n, 3, 2, 2))
    assert cn.interframe_loss(t(a), t(b)).item() >= 0.0
    assert cn.interframe_loss(t(a), t(a)).item() == 0.0
