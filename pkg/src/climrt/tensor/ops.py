"""Differentiable primitives.

Video features are ``(C, T, H, W)`` clips, optionally batched as ``(N, C, T, H, W)``.
All padding is zero padding.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from climrt.tensor import kernels
from climrt.tensor.core import DimensionError, GeometryError, NonFiniteError, Tensor, _state, as_tensor

# ----------------------------------------------------------------- helpers


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _const(b, a)
    if isinstance(b, Tensor):
        return _const(a, b), b
    a = as_tensor(a)
    return a, _const(b, a)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc


class MacCounter:
    def __init__(self):
        self.macs = 0


@contextmanager
def count_macs():
    """Count multiply-accumulates performed by convolution ops inside the block."""
    prev = getattr(_state, "macs", None)
    counter = MacCounter()
    _state.macs = counter
    try:
        yield counter
    finally:
        _state.macs = prev


def _tally(n: int) -> None:
    counter = getattr(_state, "macs", None)
    if counter is not None:
        counter.macs += int(n)


# --------------------------------------------------------- elementwise ops


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)

    def bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    out = a.data / b.data

    def bw(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)

    return Tensor._result(out, (a, b), bw, "div")


def scale(x: Tensor, factor: float) -> Tensor:
    f = x.dtype.type(factor)
    return Tensor._result(x.data * f, (x,), lambda g: (g * f,), "scale")


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    pick_a = a.data >= b.data

    def bw(g):
        return unbroadcast(g * pick_a, a.shape), unbroadcast(g * ~pick_a, b.shape)

    return Tensor._result(np.where(pick_a, a.data, b.data), (a, b), bw, "maximum")


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    pick_a = a.data <= b.data

    def bw(g):
        return unbroadcast(g * pick_a, a.shape), unbroadcast(g * ~pick_a, b.shape)

    return Tensor._result(np.where(pick_a, a.data, b.data), (a, b), bw, "minimum")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NonFiniteError("log of a non-positive value")
    return Tensor._result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return Tensor._result(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._result(np.where(mask, x.data, x.dtype.type(0)), (x,), lambda g: (g * mask,), "relu")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e)).astype(z.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Per-element binary cross-entropy on logits against a constant target."""
    t = np.asarray(target, dtype=logits.dtype)
    z = logits.data
    out = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    p = _stable_sigmoid(z)
    return Tensor._result(out, (logits,), lambda g: (g * (p - t),), "bce_with_logits")


# ---------------------------------------------------------- reductions etc


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._result(np.asarray(out, dtype=x.dtype), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return Tensor._result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    """Permute axes; by default swap the last two."""
    if axes is None:
        if x.ndim < 2:
            raise DimensionError("transpose needs at least two axes")
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def index(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    def bw(g):
        full = np.zeros_like(x.data)
        if _is_basic(idx):
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor._result(np.array(out, copy=True), (x,), bw, "index")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of nothing")
    ax = _norm_axis(axis, tensors[0].ndim)
    try:
        out = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._result(out, tensors, bw, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# ----------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-d")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return Tensor._result(out, (a, b), bw, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=ax, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return Tensor._result(out, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=ax, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def bw(g):
        return (g - soft * g.sum(axis=ax, keepdims=True),)

    return Tensor._result(out, (x,), bw, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine ``gamma * xhat + beta``."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm params must be ({c},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(x.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return Tensor._result(out.astype(x.dtype, copy=False), (x, gamma, beta), bw, "layer_norm")


# ------------------------------------------------------------------ pooling

_POOL_AXES = {"spatial": (-2, -1), "spatiotemporal": (-3, -2, -1)}


def pool_global(x: Tensor, mode: str = "avg", axes="spatiotemporal") -> Tensor:
    """Global average/max pooling; pooled axes are kept with extent 1.

    ``axes`` is ``"spatial"``, ``"spatiotemporal"`` or an explicit tuple. The max
    gradient goes to the first maximal element in row-major order.
    """
    if isinstance(axes, str):
        if axes not in _POOL_AXES:
            raise DimensionError(f"unknown pooling axes {axes!r}")
        axes = _POOL_AXES[axes]
    axes = tuple(sorted(_norm_axis(a, x.ndim) for a in np.atleast_1d(axes)))
    if any(x.shape[a] == 0 for a in axes) or x.size == 0:
        raise DimensionError("empty pooling region")
    if mode == "avg":
        return mean(x, axis=axes, keepdims=True)
    if mode != "max":
        raise ValueError(f"unknown pooling mode {mode!r}")

    keep = [a for a in range(x.ndim) if a not in axes]
    perm = keep + list(axes)
    moved = x.data.transpose(perm)
    kept_shape = moved.shape[: len(keep)]
    flat = moved.reshape(kept_shape + (-1,))
    arg = flat.argmax(axis=-1)
    out_shape = tuple(1 if a in axes else n for a, n in enumerate(x.shape))
    out = np.take_along_axis(flat, arg[..., None], axis=-1).reshape(out_shape)

    def bw(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g.reshape(kept_shape + (1,)), axis=-1)
        return (gflat.reshape(moved.shape).transpose(np.argsort(perm)),)

    return Tensor._result(out, (x,), bw, "pool_max")


# ------------------------------------------------------------- convolutions


def _as5(x: Tensor) -> tuple[np.ndarray, bool]:
    if x.ndim == 4:
        return x.data[None], False
    if x.ndim == 5:
        return x.data, True
    raise DimensionError(f"expected (C,T,H,W) or (N,C,T,H,W), got {x.shape}")


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    v = tuple(int(i) for i in v)
    if len(v) != 3:
        raise ValueError("expected three values")
    return v


def _geometry(in_shape, ksize, stride, padding) -> tuple[int, int, int]:
    out = tuple(kernels.out_extent(n, k, s, p) for n, k, s, p in zip(in_shape, ksize, stride, padding))
    if min(out) <= 0:
        raise GeometryError(f"window {ksize} stride {stride} pad {padding} on {in_shape} gives extent {out}")
    return out


def _pad5(x5: np.ndarray, padding) -> np.ndarray:
    pt, ph, pw = padding
    if pt == ph == pw == 0:
        return x5
    return np.pad(x5, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))


def _unpad5(xp: np.ndarray, padding) -> np.ndarray:
    pt, ph, pw = padding
    t, h, w = xp.shape[2:]
    return xp[:, :, pt : t - pt, ph : h - ph, pw : w - pw]


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Dense 3-D convolution (cross-correlation), kernel ``(C_out, C_in, kt, kh, kw)``."""
    stride, padding = _triple(stride), _triple(padding)
    x5, batched = _as5(x)
    if kernel.ndim != 5:
        raise DimensionError(f"kernel must be 5-d, got {kernel.shape}")
    c_out, c_in = kernel.shape[:2]
    ksize = kernel.shape[2:]
    if x5.shape[1] != c_in:
        raise DimensionError(f"input has {x5.shape[1]} channels, kernel expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"bias must be ({c_out},)")
    out_shape = _geometry(x5.shape[2:], ksize, stride, padding)
    xp = _pad5(x5, padding)
    cols = kernels.im2col(xp, ksize, stride, out_shape)
    w2 = kernel.data.reshape(c_out, -1)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[:, None]
    n = x5.shape[0]
    _tally(n * c_out * cols.shape[1] * cols.shape[2])
    out = out.reshape((n, c_out) + out_shape)
    if not batched:
        out = out[0]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        g3 = g.reshape(n, c_out, -1)
        gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
        gcols = np.matmul(w2.T, g3)
        gx = _unpad5(kernels.col2im(gcols, xp.shape, ksize, stride, out_shape), padding)
        gx = gx if batched else gx[0]
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return grads

    return Tensor._result(out, parents, bw, "conv3d")


def conv_spatial(x: Tensor, kernel: Tensor, stride=(1, 1), padding=(0, 0), bias: Tensor | None = None) -> Tensor:
    """1 x kh x kw convolution; the time extent is untouched."""
    if kernel.ndim != 5 or kernel.shape[2] != 1:
        raise DimensionError(f"spatial kernel must be (C_out, C_in, 1, kh, kw), got {kernel.shape}")
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    return conv3d(x, kernel, bias, stride=(1, sh, sw), padding=(0, ph, pw))


def conv_temporal(x: Tensor, kernel: Tensor, stride_t: int = 1, padding_t: int = 0, bias: Tensor | None = None) -> Tensor:
    """kt x 1 x 1 convolution; spatial extents are untouched."""
    if kernel.ndim != 5 or kernel.shape[3:] != (1, 1):
        raise DimensionError(f"temporal kernel must be (C_out, C_in, kt, 1, 1), got {kernel.shape}")
    return conv3d(x, kernel, bias, stride=(stride_t, 1, 1), padding=(padding_t, 0, 0))


def conv_transpose3d(x: Tensor, kernel: Tensor, stride=1, bias: Tensor | None = None) -> Tensor:
    """Transposed 3-D convolution, kernel ``(C_in, C_out, kt, kh, kw)``, no padding.

    Output extent per axis is ``(in - 1) * stride + k``.
    """
    stride = _triple(stride)
    x5, batched = _as5(x)
    if kernel.ndim != 5:
        raise DimensionError(f"kernel must be 5-d, got {kernel.shape}")
    c_in, c_out = kernel.shape[:2]
    ksize = kernel.shape[2:]
    if x5.shape[1] != c_in:
        raise DimensionError(f"input has {x5.shape[1]} channels, kernel expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"bias must be ({c_out},)")
    n = x5.shape[0]
    in_shape = x5.shape[2:]
    out_shape = tuple((i - 1) * s + k for i, s, k in zip(in_shape, stride, ksize))
    w2 = kernel.data.reshape(c_in, -1)
    x3 = x5.reshape(n, c_in, -1)
    cols = np.matmul(w2.T, x3)
    out = kernels.col2im(cols, (n, c_out) + out_shape, ksize, stride, in_shape)
    if bias is not None:
        out += bias.data[None, :, None, None, None]
    _tally(n * c_in * w2.shape[1] * x3.shape[2])
    if not batched:
        out = out[0]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        g5 = g if batched else g[None]
        gcols = kernels.im2col(np.ascontiguousarray(g5), ksize, stride, in_shape)
        gx = np.matmul(w2, gcols).reshape(x5.shape)
        gw = np.matmul(x3, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
        grads = [gx if batched else gx[0], gw]
        if bias is not None:
            grads.append(g5.sum(axis=(0, 2, 3, 4)))
        return grads

    return Tensor._result(out, parents, bw, "conv_transpose3d")


def depthwise_conv3d(x: Tensor, kernel: Tensor, stride=1, padding=0) -> Tensor:
    """Per-channel convolution.

    ``kernel`` is ``(C, kt, kh, kw)`` shared across the batch, or ``(N, C, kt, kh, kw)``
    with one kernel per sample (used by batched cross-correlation).
    """
    stride, padding = _triple(stride), _triple(padding)
    x5, batched = _as5(x)
    n, c = x5.shape[:2]
    if kernel.ndim == 4:
        per_sample = False
        k5 = kernel.data[None]
    elif kernel.ndim == 5 and batched:
        per_sample = True
        k5 = kernel.data
        if k5.shape[0] != n:
            raise DimensionError(f"per-sample kernel batch {k5.shape[0]} != input batch {n}")
    else:
        raise DimensionError(f"bad depthwise kernel shape {kernel.shape}")
    if k5.shape[1] != c:
        raise DimensionError(f"input has {c} channels, depthwise kernel has {k5.shape[1]}")
    ksize = k5.shape[2:]
    out_shape = _geometry(x5.shape[2:], ksize, stride, padding)
    xp = _pad5(x5, padding)
    cols = kernels.im2col(xp, ksize, stride, out_shape)
    ktaps = int(np.prod(ksize))
    cols4 = cols.reshape(n, c, ktaps, -1)
    kflat = np.broadcast_to(k5.reshape(k5.shape[0], c, ktaps), (n, c, ktaps))
    out = np.einsum("nckl,nck->ncl", cols4, kflat)
    _tally(n * c * ktaps * cols4.shape[3])
    out = out.reshape((n, c) + out_shape)
    if not batched:
        out = out[0]

    def bw(g):
        g3 = (g if batched else g[None]).reshape(n, c, -1)
        gk = np.einsum("ncl,nckl->nck", g3, cols4)
        gk = gk.reshape((n,) + k5.shape[1:])
        if not per_sample:
            gk = gk.sum(axis=0)
        gcols = np.einsum("ncl,nck->nckl", g3, kflat).reshape(cols.shape)
        gx = _unpad5(kernels.col2im(gcols, xp.shape, ksize, stride, out_shape), padding)
        return np.ascontiguousarray(gx if batched else gx[0]), gk

    return Tensor._result(out, (x, kernel), bw, "depthwise_conv3d")
