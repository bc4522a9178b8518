"""Central finite-difference gradient checks, run in float64."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from climrt.tensor.core import Tensor, precision


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """Worst absolute gap, relative to the largest gradient magnitude involved.

    ``floor`` bounds the denominator from below, so inputs whose true gradient is
    zero are not judged by round-off alone.
    """
    gap = np.max(np.abs(analytic - numeric)) if analytic.size else 0.0
    ref = max(np.max(np.abs(numeric)) if numeric.size else 0.0, np.max(np.abs(analytic)) if analytic.size else 0.0)
    return float(gap / max(ref, floor, 1e-12))


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    *,
    eps: float = 1e-3,
    tol: float = 1e-4,
    max_coords: int | None = 64,
    directions: int = 0,
    seed: int = 0,
    name: str = "fn",
) -> GradcheckResult:
    """Compare backward() against central differences of ``fn(*tensors)``.

    Each input is perturbed coordinate-wise (a random subset of at most
    ``max_coords`` coordinates per input when it is larger). ``directions``
    extra random directional derivatives cover the whole gradient at once.
    """
    rng = np.random.default_rng(seed)
    base = [np.asarray(a, dtype=np.float64) for a in inputs]

    def evaluate(arrays, grad=False):
        with precision(np.float64):
            ts = [Tensor(a, requires_grad=grad, dtype=np.float64) for a in arrays]
            out = fn(*ts)
            if grad:
                out.backward()
                return float(out.data), [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]
            return float(out.data), None

    _, analytic = evaluate(base, grad=True)
    # Per-input errors are floored at a small fraction of the check's largest gradient.
    floor = 1e-3 * max((float(np.max(np.abs(g))) for g in analytic if g.size), default=0.0)
    worst, checked = 0.0, 0
    for i, arr in enumerate(base):
        flat_idx = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            flat_idx = rng.choice(arr.size, size=max_coords, replace=False)
        numeric = np.empty(len(flat_idx))
        for j, k in enumerate(flat_idx):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[i].reshape(-1)[k] += eps
            minus[i].reshape(-1)[k] -= eps
            numeric[j] = (evaluate(plus)[0] - evaluate(minus)[0]) / (2 * eps)
        worst = max(worst, rel_error(analytic[i].reshape(-1)[flat_idx], numeric, floor))
        checked += len(flat_idx)

    for _ in range(directions):
        dirs = [rng.standard_normal(a.shape) for a in base]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        plus = [a + eps * d for a, d in zip(base, dirs)]
        minus = [a - eps * d for a, d in zip(base, dirs)]
        numeric = (evaluate(plus)[0] - evaluate(minus)[0]) / (2 * eps)
        analytic_dir = sum(float((g * d).sum()) for g, d in zip(analytic, dirs))
        worst = max(worst, rel_error(np.array([analytic_dir]), np.array([numeric]), floor))
        checked += 1

    return GradcheckResult(name, worst, checked, tol)
