"""One-pass-evaluation metrics: centre-error precision and IoU success."""

from __future__ import annotations

import numpy as np

SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)
PRECISION_THRESHOLDS = np.arange(0, 51, dtype=np.float64)


def _as_xywh(boxes) -> np.ndarray:
    arr = np.array([b.xywh() if hasattr(b, "xywh") else b for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def _check(results, truth) -> tuple[np.ndarray, np.ndarray]:
    r, t = _as_xywh(results), _as_xywh(truth)
    if len(r) != len(t):
        raise ValueError(f"trajectory has {len(r)} boxes, ground truth {len(t)}")
    return r, t


def center_errors(results, truth) -> np.ndarray:
    r, t = _check(results, truth)
    rc = r[:, :2] + r[:, 2:] / 2
    tc = t[:, :2] + t[:, 2:] / 2
    return np.sqrt(((rc - tc) ** 2).sum(axis=1))


def overlaps(results, truth) -> np.ndarray:
    """Per-frame IoU of top-left ``x, y, w, h`` boxes."""
    r, t = _check(results, truth)
    x1 = np.maximum(r[:, 0], t[:, 0])
    y1 = np.maximum(r[:, 1], t[:, 1])
    x2 = np.minimum(r[:, 0] + r[:, 2], t[:, 0] + t[:, 2])
    y2 = np.minimum(r[:, 1] + r[:, 3], t[:, 1] + t[:, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    union = r[:, 2] * r[:, 3] + t[:, 2] * t[:, 3] - inter
    # Clipped: round-off can push identical boxes a hair above 1.
    return np.clip(np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0), 0.0, 1.0)


def precision_at(results, truth, threshold_px: float = 20.0) -> float:
    """Fraction of frames whose centre error is within ``threshold_px``."""
    err = center_errors(results, truth)
    return float(np.mean(err <= threshold_px)) if len(err) else 0.0


def precision_curve(results, truth, thresholds=PRECISION_THRESHOLDS) -> np.ndarray:
    err = center_errors(results, truth)
    return np.array([np.mean(err <= th) if len(err) else 0.0 for th in thresholds])


def success_auc(results, truth, thresholds=SUCCESS_THRESHOLDS) -> tuple[np.ndarray, float]:
    """Success curve (fraction of frames with IoU strictly above each threshold) and its mean."""
    ious = overlaps(results, truth)
    curve = np.array([np.mean(ious > th) if len(ious) else 0.0 for th in thresholds])
    return curve, float(curve.mean())
