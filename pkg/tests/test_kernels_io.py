import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from climrt import _jit
from climrt.imageio import ImageFormatError, read_ppm, write_ppm
from climrt.params import load_state, load_weights, save_weights, state_dict
from climrt.tensor import io as tio
from climrt.tensor import kernels
from climrt.tracker.geometry import BBox, crop_patch, crop_window, sample_window


def both(fn):
    """Evaluate ``fn`` under each backend."""
    out = {}
    for name in ("numpy", "numba"):
        prev = _jit.set_backend(name)
        try:
            out[name] = fn()
        finally:
            _jit.set_backend(prev)
    return out["numpy"], out["numba"]


# ---------------------------------------------------------------- backend parity


@given(st.integers(0, 10_000))
def test_im2col_col2im_backends_agree(seed):
    r = np.random.default_rng(seed)
    xp = r.standard_normal((2, 3, 4, 7, 6))
    ks = (int(r.integers(1, 3)), int(r.integers(1, 4)), int(r.integers(1, 4)))
    stv = (1, int(r.integers(1, 3)), int(r.integers(1, 3)))
    out = tuple(kernels.out_extent(n, k, s, 0) for n, k, s in zip(xp.shape[2:], ks, stv))
    a, b = both(lambda: kernels.im2col(xp, ks, stv, out))
    np.testing.assert_array_equal(a, b)
    c, d = both(lambda: kernels.col2im(a, xp.shape, ks, stv, out))
    np.testing.assert_allclose(c, d, atol=1e-12)


def test_col2im_is_adjoint_of_im2col(rng):
    xp = rng.standard_normal((1, 2, 3, 6, 6))
    ks, stv = (2, 3, 3), (1, 2, 1)
    out = tuple(kernels.out_extent(n, k, s, 0) for n, k, s in zip(xp.shape[2:], ks, stv))
    cols = kernels.im2col(xp, ks, stv, out)
    g = rng.standard_normal(cols.shape)
    np.testing.assert_allclose((cols * g).sum(), (xp * kernels.col2im(g, xp.shape, ks, stv, out)).sum(), rtol=1e-12)


@given(st.integers(0, 10_000))
def test_bilinear_backends_agree(seed):
    r = np.random.default_rng(seed)
    img = r.random((9, 7, 3))
    xs, ys = r.uniform(-3, 10, 11), r.uniform(-3, 12, 5)
    a, b = both(lambda: kernels.bilinear_sample(img, img.mean(axis=(0, 1)), xs, ys))
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_bilinear_matches_per_pixel_oracle(seed, backend):
    r = np.random.default_rng(seed)
    img = r.random((6, 8, 3))
    fill = img.mean(axis=(0, 1))
    xs, ys = r.uniform(-2, 9, 4), r.uniform(-2, 7, 3)
    got = kernels.bilinear_sample(img, fill, xs, ys)
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            np.testing.assert_allclose(got[i, j], oracles.bilinear(img, fill, x, y), atol=1e-12)


def test_env_flag_disables_numba(monkeypatch):
    import importlib

    monkeypatch.setenv("CLIMRT_DISABLE_NUMBA", "1")
    mod = importlib.reload(_jit)
    try:
        assert mod.backend() == "numpy"
    finally:
        monkeypatch.delenv("CLIMRT_DISABLE_NUMBA")
        importlib.reload(_jit)


# ---------------------------------------------------------------- cropping


@pytest.mark.trivial
def test_crop_identity_resample(backend, rng):
    frame = rng.random((40, 40, 3)).astype(np.float32)
    box = BBox(20.0, 20.0, 20.0, 20.0)  # context side = 40 = out_size
    np.testing.assert_allclose(crop_patch(frame, box, 0.5, 40), frame, atol=1e-6)


@pytest.mark.trivial
def test_crop_corner_reads_channel_mean(backend, rng):
    frame = rng.random((30, 30, 3)).astype(np.float32)
    patch = crop_patch(frame, BBox(0.0, 0.0, 10.0, 10.0), 0.5, 20)
    np.testing.assert_allclose(patch[0, 0], frame.reshape(-1, 3).mean(axis=0), atol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_crop_matches_gather_oracle(seed):
    r = np.random.default_rng(seed)
    frame = r.random((24, 30, 3))
    box = BBox(float(r.uniform(0, 30)), float(r.uniform(0, 24)), float(r.uniform(4, 12)), float(r.uniform(4, 12)))
    win = crop_window(box, 9)
    got = sample_window(frame, win)
    fill = frame.reshape(-1, 3).mean(axis=0)
    for i in range(9):
        for j in range(9):
            x = win.cx + (j + 0.5 - 4.5) * win.scale - 0.5
            y = win.cy + (i + 0.5 - 4.5) * win.scale - 0.5
            np.testing.assert_allclose(got[i, j], oracles.bilinear(frame, fill, x, y), atol=1e-6)


# ---------------------------------------------------------------- file formats


@given(arrays(np.float32, st.lists(st.integers(1, 4), min_size=0, max_size=4).map(tuple), elements=st.floats(-1e6, 1e6, width=32)))
def test_clmt_round_trip(a):
    b = tio.loads(tio.dumps(a))
    assert b.shape == a.shape and b.tobytes() == np.ascontiguousarray(a).tobytes()


def test_clmt_layout():
    blob = tio.dumps(np.array([[1.0, 2.0, 3.0]], np.float32))
    assert blob[:4] == b"CLMT" and blob[4] == 1 and blob[5] == 2
    assert blob[6:14] == (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert np.frombuffer(blob[14:], "<f4").tolist() == [1.0, 2.0, 3.0]


@pytest.mark.parametrize("blob", [b"XXXX", b"CLMT\x02\x00" + b"\0" * 4, b"CLMT\x01\x01\x02\x00\x00\x00" + b"\0" * 4])
def test_clmt_rejects_bad_files(blob):
    with pytest.raises(tio.FormatError):
        tio.loads(blob)


def test_ppm_round_trip(tmp_path, rng):
    img = np.rint(rng.random((5, 7, 3)) * 255) / 255
    write_ppm(tmp_path / "a.ppm", img)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n7 5\n255\n")
    np.testing.assert_allclose(read_ppm(tmp_path / "a.ppm"), img, atol=1e-7)


def test_ppm_rejects_garbage(tmp_path):
    (tmp_path / "b.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0")
    with pytest.raises(ImageFormatError):
        read_ppm(tmp_path / "b.ppm")
    (tmp_path / "c.ppm").write_bytes(b"P6\n4 4\n255\n\x00\x00")
    with pytest.raises(ImageFormatError):
        read_ppm(tmp_path / "c.ppm")


def test_weight_manifest_round_trip(tmp_path):
    from climrt.climnet import ClimNetConfig, init_climnet

    params = init_climnet(ClimNetConfig(widths=(4, 4, 8, 8)), seed=3)
    save_weights(tmp_path, state_dict(params))
    lines = (tmp_path / "manifest.txt").read_text().splitlines()
    name, fname, extent = lines[0].split()
    assert (tmp_path / fname).is_file() and tuple(int(d) for d in extent.split("x")) == state_dict(params)[name].shape
    restored = load_state(init_climnet(ClimNetConfig(widths=(4, 4, 8, 8)), seed=9), load_weights(tmp_path))
    for k, v in state_dict(restored).items():
        np.testing.assert_array_equal(v, state_dict(params)[k])
    with pytest.raises(KeyError):
        load_state(init_climnet(ClimNetConfig(widths=(4, 4, 4, 4)), seed=0), {})
