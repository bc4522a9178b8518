"""Boxes, Siamese crops and the response-grid mapping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from climrt.tensor import kernels


class DegenerateBoxError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous pixel coordinates (center form)."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0) or not all(map(math.isfinite, (self.cx, self.cy, self.w, self.h))):
            raise DegenerateBoxError(f"invalid box {self}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BBox":
        return cls(x + w / 2, y + h / 2, w, h)

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    def xywh(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.w, self.h)

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)


def iou(a, b) -> float:
    """IoU of two corner-form boxes ``[x1, y1, x2, y2]`` (or BBox)."""
    a = a.corners() if isinstance(a, BBox) else a
    b = b.corners() if isinstance(b, BBox) else b
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return min(1.0, inter / union) if union > 0 else 0.0


# ------------------------------------------------------------------ cropping


@dataclass(frozen=True)
class CropWindow:
    """Square frame region of side ``side`` centred at (cx, cy), resampled to ``out_size``."""

    cx: float
    cy: float
    side: float
    out_size: int

    @property
    def scale(self) -> float:
        """Frame pixels per crop pixel."""
        return self.side / self.out_size

    def to_frame(self, x: float, y: float) -> tuple[float, float]:
        return self.cx + (x - self.out_size / 2) * self.scale, self.cy + (y - self.out_size / 2) * self.scale

    def to_crop(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.cx) / self.scale + self.out_size / 2, (y - self.cy) / self.scale + self.out_size / 2

    def box_to_crop(self, box: BBox) -> BBox:
        cx, cy = self.to_crop(box.cx, box.cy)
        return BBox(cx, cy, box.w / self.scale, box.h / self.scale)

    def box_to_frame(self, box: BBox) -> BBox:
        cx, cy = self.to_frame(box.cx, box.cy)
        return BBox(cx, cy, box.w * self.scale, box.h * self.scale)


def context_side(box: BBox, context: float = 0.5) -> float:
    """``sqrt((w + 2c)(h + 2c))`` with ``c = context * (w + h) / 2``."""
    c = context * (box.w + box.h) / 2
    return math.sqrt((box.w + 2 * c) * (box.h + 2 * c))


def crop_window(box: BBox, out_size: int, context: float = 0.5, side_factor: float = 1.0) -> CropWindow:
    side = context_side(box, context) * side_factor
    if not side > 0:
        raise DegenerateBoxError(f"zero-area crop for {box}")
    return CropWindow(box.cx, box.cy, side, int(out_size))


def sample_window(frame: np.ndarray, window: CropWindow) -> np.ndarray:
    """Bilinear resample; area outside the frame takes the per-channel frame mean."""
    frame = np.asarray(frame)
    fill = frame.reshape(-1, frame.shape[2]).mean(axis=0)
    u = np.arange(window.out_size) + 0.5
    # Pixel i covers [i, i+1); its centre is i + 0.5.
    xs = window.cx + (u - window.out_size / 2) * window.scale - 0.5
    ys = window.cy + (u - window.out_size / 2) * window.scale - 0.5
    return kernels.bilinear_sample(frame, fill, xs, ys).astype(np.float32)


def crop_patch(frame: np.ndarray, box: BBox, context: float = 0.5, out_size: int = 127, side_factor: float = 1.0) -> np.ndarray:
    """Square context crop around ``box`` resized to ``out_size`` (H, W, C)."""
    return sample_window(frame, crop_window(box, out_size, context, side_factor))


# ------------------------------------------------------------------ response grid


@dataclass(frozen=True)
class Grid:
    """Response cells mapped onto search-crop pixels; centre cell sits on the crop centre."""

    rows: int
    cols: int
    stride: float
    search_size: int

    def cell_x(self, j) -> np.ndarray:
        return self.search_size / 2 + (np.asarray(j, dtype=np.float64) - (self.cols - 1) / 2) * self.stride

    def cell_y(self, i) -> np.ndarray:
        return self.search_size / 2 + (np.asarray(i, dtype=np.float64) - (self.rows - 1) / 2) * self.stride

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(ys, xs) arrays of shape (rows, cols)."""
        return np.meshgrid(self.cell_y(np.arange(self.rows)), self.cell_x(np.arange(self.cols)), indexing="ij")
