"""Tensor value type and the eager reverse-mode graph."""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np


class TensorError(Exception):
    """Base class for tensor-engine failures."""


class DimensionError(TensorError, ValueError):
    """Operand shapes are incompatible."""


class GeometryError(TensorError, ValueError):
    """A strided/padded window yields a non-positive output extent."""


class GraphError(TensorError, RuntimeError):
    """backward() called on a non-scalar, detached, or already-consumed graph."""


class NonFiniteError(TensorError, FloatingPointError):
    """A forward op produced NaN or Inf."""


_state = threading.local()
_node_ids = itertools.count()


def _get(name, default):
    return getattr(_state, name, default)


def default_dtype() -> np.dtype:
    return _get("dtype", np.dtype(np.float32))


@contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are created with."""
    prev = default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


def grad_enabled() -> bool:
    return _get("grad", True)


@contextmanager
def no_grad():
    """Run ops without recording a graph (inference)."""
    prev = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


class Tensor:
    """Dense float array with an optional gradient buffer.

    Tensors are treated as immutable; only ``grad`` changes after construction.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_id", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or default_dtype())
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"
        self._id = next(_node_ids)
        self._consumed = False

    # -- construction ---------------------------------------------------
    @classmethod
    def _result(cls, data: np.ndarray, parents: Iterable["Tensor"], backward, op: str) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"{op} produced non-finite values")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        out._id = next(_node_ids)
        out._consumed = False
        parents = tuple(parents)
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties -----------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, dtype=dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    # -- autodiff -------------------------------------------------------
    def backward(self) -> None:
        backward(self)

    # -- operator sugar (implemented in ops) ------------------------------
    def __add__(self, other):
        from climrt.tensor import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from climrt.tensor import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from climrt.tensor import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from climrt.tensor import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from climrt.tensor import ops

        return ops.div(self, other)

    def __rtruediv__(self, other):
        from climrt.tensor import ops

        return ops.div(other, self)

    def __neg__(self):
        from climrt.tensor import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from climrt.tensor import ops

        return ops.matmul(self, other)

    def __getitem__(self, index):
        from climrt.tensor import ops

        return ops.index(self, index)

    def reshape(self, *shape):
        from climrt.tensor import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from climrt.tensor import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from climrt.tensor import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        from climrt.tensor import ops

        return ops.transpose(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _collect(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in seen:
            continue
        seen.add(node._id)
        nodes.append(node)
        stack.extend(node._parents)
    # Node ids are issued at execution time, so descending id is reverse execution order.
    nodes.sort(key=lambda t: t._id, reverse=True)
    return nodes


def backward(root: Tensor) -> None:
    """Populate ``grad`` on every ``requires_grad`` leaf reachable from a scalar ``root``.

    Leaf gradients accumulate. The graph is released afterwards; a second call on the
    same root raises :class:`GraphError`.
    """
    if root._consumed:
        raise GraphError("graph already consumed by a previous backward(); rebuild it")
    if root.data.size != 1:
        raise GraphError(f"backward() needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise GraphError("root is detached from any differentiable input")

    grads: dict[int, np.ndarray] = {root._id: np.ones_like(root.data)}
    for node in _collect(root):
        g = grads.pop(node._id, None)
        if node._backward is None:
            if node.requires_grad and g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise DimensionError(
                        f"{node._op} backward produced grad {pg.shape} for input {parent.shape}"
                    )
                prev = grads.get(parent._id)
                grads[parent._id] = pg if prev is None else prev + pg
        node._parents = ()
        node._backward = None
        node._consumed = True
    root._consumed = True
