"""Hot loops: patch extraction (im2col), its adjoint, and bilinear resampling.

Every kernel has a numba implementation and a numpy implementation with the
same signature; the public functions dispatch on :func:`climrt._jit.backend`.
Arrays are 5-D ``(N, C, T, H, W)`` and already zero-padded by the caller.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from climrt._jit import njit, use_numba


def out_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


# --------------------------------------------------------------------- im2col


@njit
def _im2col_numba(xp, kt, kh, kw, st, sh, sw, to, ho, wo):
    n_batch, chans = xp.shape[0], xp.shape[1]
    cols = np.empty((n_batch, chans * kt * kh * kw, to * ho * wo), dtype=xp.dtype)
    for n in range(n_batch):
        for c in range(chans):
            for a in range(kt):
                for b in range(kh):
                    for d in range(kw):
                        row = ((c * kt + a) * kh + b) * kw + d
                        for t in range(to):
                            ti = t * st + a
                            for h in range(ho):
                                hi = h * sh + b
                                base = (t * ho + h) * wo
                                for w in range(wo):
                                    cols[n, row, base + w] = xp[n, c, ti, hi, w * sw + d]
    return cols


def _im2col_numpy(xp, kt, kh, kw, st, sh, sw, to, ho, wo):
    n_batch, chans = xp.shape[:2]
    win = sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))
    win = win[:, :, : (to - 1) * st + 1 : st, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]
    # (N, C, To, Ho, Wo, kt, kh, kw) -> (N, C, kt, kh, kw, To, Ho, Wo)
    win = win.transpose(0, 1, 5, 6, 7, 2, 3, 4)
    return np.ascontiguousarray(win).reshape(n_batch, chans * kt * kh * kw, to * ho * wo)


def im2col(xp: np.ndarray, ksize, stride, out_shape) -> np.ndarray:
    """Gather every receptive field of ``xp`` into columns ``(N, C*kt*kh*kw, To*Ho*Wo)``."""
    kt, kh, kw = ksize
    st, sh, sw = stride
    to, ho, wo = out_shape
    xp = np.ascontiguousarray(xp)
    if use_numba():
        return _im2col_numba(xp, kt, kh, kw, st, sh, sw, to, ho, wo)
    return _im2col_numpy(xp, kt, kh, kw, st, sh, sw, to, ho, wo)


# --------------------------------------------------------------------- col2im


@njit
def _col2im_numba(cols, chans, tp, hp, wp, kt, kh, kw, st, sh, sw, to, ho, wo):
    n_batch = cols.shape[0]
    xp = np.zeros((n_batch, chans, tp, hp, wp), dtype=cols.dtype)
    for n in range(n_batch):
        for c in range(chans):
            for a in range(kt):
                for b in range(kh):
                    for d in range(kw):
                        row = ((c * kt + a) * kh + b) * kw + d
                        for t in range(to):
                            ti = t * st + a
                            for h in range(ho):
                                hi = h * sh + b
                                base = (t * ho + h) * wo
                                for w in range(wo):
                                    xp[n, c, ti, hi, w * sw + d] += cols[n, row, base + w]
    return xp


def _col2im_numpy(cols, chans, tp, hp, wp, kt, kh, kw, st, sh, sw, to, ho, wo):
    n_batch = cols.shape[0]
    xp = np.zeros((n_batch, chans, tp, hp, wp), dtype=cols.dtype)
    c6 = cols.reshape(n_batch, chans, kt, kh, kw, to, ho, wo)
    for a in range(kt):
        for b in range(kh):
            for d in range(kw):
                xp[
                    :,
                    :,
                    a : a + (to - 1) * st + 1 : st,
                    b : b + (ho - 1) * sh + 1 : sh,
                    d : d + (wo - 1) * sw + 1 : sw,
                ] += c6[:, :, a, b, d]
    return xp


def col2im(cols: np.ndarray, padded_shape, ksize, stride, out_shape) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto a padded volume."""
    _, chans, tp, hp, wp = padded_shape
    kt, kh, kw = ksize
    st, sh, sw = stride
    to, ho, wo = out_shape
    cols = np.ascontiguousarray(cols)
    if use_numba():
        return _col2im_numba(cols, chans, tp, hp, wp, kt, kh, kw, st, sh, sw, to, ho, wo)
    return _col2im_numpy(cols, chans, tp, hp, wp, kt, kh, kw, st, sh, sw, to, ho, wo)


# ------------------------------------------------------------------- bilinear


@njit
def _bilinear_numba(img, fill, xs, ys):
    height, width, chans = img.shape
    out = np.empty((ys.shape[0], xs.shape[0], chans), dtype=img.dtype)
    for i in range(ys.shape[0]):
        y = ys[i]
        y0 = int(np.floor(y))
        fy = y - y0
        for j in range(xs.shape[0]):
            x = xs[j]
            x0 = int(np.floor(x))
            fx = x - x0
            for c in range(chans):
                acc = 0.0
                for dy in range(2):
                    yy = y0 + dy
                    wy = fy if dy == 1 else 1.0 - fy
                    if wy == 0.0:
                        continue
                    for dx in range(2):
                        xx = x0 + dx
                        wx = fx if dx == 1 else 1.0 - fx
                        if wx == 0.0:
                            continue
                        if 0 <= yy < height and 0 <= xx < width:
                            v = img[yy, xx, c]
                        else:
                            v = fill[c]
                        acc += wy * wx * v
                out[i, j, c] = acc
    return out


def _bilinear_numpy(img, fill, xs, ys):
    height, width, _ = img.shape
    pad = np.empty((height + 2, width + 2, img.shape[2]), dtype=img.dtype)
    pad[:] = fill
    pad[1:-1, 1:-1] = img
    # Clamp far out-of-frame samples onto the fill border; interior weights stay exact.
    xs_c = np.clip(xs, -1.0, width)
    ys_c = np.clip(ys, -1.0, height)
    x0 = np.floor(xs_c).astype(np.int64)
    y0 = np.floor(ys_c).astype(np.int64)
    fx = (xs_c - x0).astype(img.dtype)
    fy = (ys_c - y0).astype(img.dtype)
    x0p, y0p = x0 + 1, y0 + 1
    x1p = np.minimum(x0p + 1, width + 1)
    y1p = np.minimum(y0p + 1, height + 1)
    top = pad[y0p][:, x0p] * (1 - fx)[None, :, None] + pad[y0p][:, x1p] * fx[None, :, None]
    bot = pad[y1p][:, x0p] * (1 - fx)[None, :, None] + pad[y1p][:, x1p] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]


def bilinear_sample(img: np.ndarray, fill: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` (H, W, C) on the separable grid ``ys`` x ``xs`` (pixel-index units).

    Taps falling outside the frame read ``fill`` (one value per channel).
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    fill = np.asarray(fill, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if use_numba():
        return _bilinear_numba(img, fill, xs, ys)
    return _bilinear_numpy(img, fill, xs, ys)
