"""Optimizers and learning-rate schedules."""

from __future__ import annotations

import numpy as np

from climrt.params import parameters
from climrt.tensor import Tensor


def sgd_step(params, grads, lr: float = 5e-4, momentum: float = 0.9, weight_decay: float = 1e-4, velocity=None):
    """One classical-momentum step on plain arrays.

    ``v <- momentum * v + (g + weight_decay * p)``; ``p <- p - lr * v``.
    Returns ``(new_params, new_velocity)``.
    """
    if len(grads) != len(params) or any(g is None for g in grads):
        raise ValueError("sgd_step needs one gradient per parameter")
    velocity = velocity or [np.zeros_like(p) for p in params]
    new_p, new_v = [], []
    for p, g, v in zip(params, grads, velocity):
        v = momentum * v + (g + weight_decay * p)
        new_v.append(v)
        new_p.append(p - lr * v)
    return new_p, new_v


class SGD:
    """Momentum SGD updating the tensors of a parameter tree in place."""

    def __init__(self, tree, lr: float = 5e-4, momentum: float = 0.9, weight_decay: float = 1e-4):
        self.params: list[Tensor] = parameters(tree)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            v = self.momentum * self.velocity[i] + (g + self.weight_decay * p.data)
            self.velocity[i] = v.astype(p.dtype, copy=False)
            p.data = (p.data - p.dtype.type(lr) * self.velocity[i]).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam:
    """Adam with decoupled weight decay; an alternative for short toy runs."""

    def __init__(self, tree, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params: list[Tensor] = parameters(tree)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.t += 1
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            update = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps) + self.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def log_schedule(step: int, total: int, start: float = 1e-2, end: float = 1e-4) -> float:
    """Learning rate decayed geometrically from ``start`` to ``end`` over ``total`` steps."""
    if total <= 1:
        return start
    frac = min(max(step / (total - 1), 0.0), 1.0)
    if start <= 0 or end <= 0:
        # Geometric decay is undefined through zero; fall back to linear.
        return float(start + frac * (end - start))
    return float(np.exp(np.log(start) + frac * (np.log(end) - np.log(start))))


def make_optimizer(name: str, tree, lr: float, momentum: float = 0.9, weight_decay: float = 1e-4):
    if name == "sgd":
        return SGD(tree, lr=lr, momentum=momentum, weight_decay=weight_decay)
    if name == "adam":
        return Adam(tree, lr=lr, weight_decay=0.0)
    raise ValueError(f"unknown optimizer {name!r}")
