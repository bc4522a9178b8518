"""Composite tracking loss: softmax CE + centerness BCE + IoU loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from climrt.tensor import Tensor, bce_with_logits, div, index, log_softmax, minimum, mul, scale, sum_
from climrt.tracker.heads import HeadOutputs, LabelTargets


@dataclass
class LossBreakdown:
    total: Tensor
    cls1: float
    cls2: float
    loc: float
    positives: int
    no_positive: bool


def _channel(x: Tensor, k: int) -> Tensor:
    return index(x, (Ellipsis, k, slice(None), slice(None)))


def ltrb_iou(pred: Tensor, target: np.ndarray) -> Tensor:
    """IoU of boxes sharing an anchor point, both given as l/t/r/b distances."""
    tgt = Tensor(np.asarray(target, dtype=pred.dtype), dtype=pred.dtype)
    pl, pt, pr, pb = (_channel(pred, k) for k in range(4))
    tl, tt, tr, tb = (_channel(tgt, k) for k in range(4))
    inter = (minimum(pl, tl) + minimum(pr, tr)) * (minimum(pt, tt) + minimum(pb, tb))
    union = (pl + pr) * (pt + pb) + (tl + tr) * (tt + tb) - inter
    return div(inter, union)


def tracking_loss(h: HeadOutputs, targets: LabelTargets, lambdas=(1.0, 1.0, 3.0)) -> LossBreakdown:
    """``l1 * CE(cls1) + l2 * BCE(cls2) + l3 * mean(1 - IoU)``.

    CE averages over non-ignored cells; BCE and IoU average over positive cells and
    contribute zero (with ``no_positive`` set) when there are none.
    """
    dt = h.cls1.dtype
    lam1, lam2, lam3 = lambdas
    valid = targets.cls1 >= 0
    onehot = np.zeros(h.cls1.shape, dtype=dt)
    fg = (targets.cls1 == 1).astype(dt)
    onehot[..., 1, :, :] = fg
    onehot[..., 0, :, :] = ((targets.cls1 == 0)).astype(dt)
    n_valid = max(int(valid.sum()), 1)
    ce = scale(sum_(mul(log_softmax(h.cls1, axis=-3), onehot)), -1.0 / n_valid)

    pos = targets.positive.astype(dt)
    n_pos = int(targets.positive.sum())
    if n_pos == 0:
        total = scale(ce, lam1)
        return LossBreakdown(total, float(ce.data), 0.0, 0.0, 0, True)
    bce = scale(sum_(mul(bce_with_logits(_channel(h.cls2, 0), targets.cls2), pos)), 1.0 / n_pos)
    safe_target = np.where(targets.positive[..., None, :, :], targets.reg, 1.0)
    iou_map = ltrb_iou(h.reg, safe_target)
    loc = scale(sum_(mul(1.0 - iou_map, pos)), 1.0 / n_pos)
    total = scale(ce, lam1) + scale(bce, lam2) + scale(loc, lam3)
    return LossBreakdown(total, float(ce.data), float(bce.data), float(loc.data), n_pos, False)
