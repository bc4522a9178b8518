"""Prediction heads, anchor-free decoding and label assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from climrt.lct import SimilarityMap
from climrt.params import he_normal, zeros
from climrt.tensor import Tensor, conv_spatial, exp, relu, reshape, transpose
from climrt.tracker.geometry import BBox, CropWindow, Grid


@dataclass
class HeadBranch:
    hidden: Tensor  # (C_h, C, 1, 3, 3)
    hidden_bias: Tensor
    out: Tensor  # (k, C_h, 1, 3, 3)
    out_bias: Tensor


@dataclass
class HeadParams:
    cls1: HeadBranch
    cls2: HeadBranch
    reg: HeadBranch


@dataclass
class HeadOutputs:
    cls1: Tensor  # (2, Hr, Wr) logits, channel 1 = foreground
    cls2: Tensor  # (1, Hr, Wr) centerness logits
    reg: Tensor  # (4, Hr, Wr) positive l/t/r/b distances in grid units

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.cls1.shape[-2:]


def init_heads(channels: int, hidden: int = 64, seed: int = 0) -> HeadParams:
    rng = np.random.default_rng(seed)

    def branch(k: int, gain: float) -> HeadBranch:
        return HeadBranch(
            he_normal(rng, (hidden, channels, 1, 3, 3), channels * 9),
            zeros((hidden,)),
            he_normal(rng, (k, hidden, 1, 3, 3), hidden * 9, gain=gain),
            zeros((k,)),
        )

    return HeadParams(branch(2, 0.1), branch(1, 0.1), branch(4, 0.01))


def _branch(x: Tensor, p: HeadBranch) -> Tensor:
    h = relu(conv_spatial(x, p.hidden, padding=(1, 1), bias=p.hidden_bias))
    return conv_spatial(h, p.out, padding=(1, 1), bias=p.out_bias)


def heads_forward(m_st: SimilarityMap, params: HeadParams) -> HeadOutputs:
    tokens = m_st.tokens
    batched = tokens.ndim == 3
    lead = (tokens.shape[0],) if batched else ()
    c = tokens.shape[-1]
    fmap = reshape(transpose(tokens), lead + (c, 1, m_st.height, m_st.width))

    def run(p: HeadBranch) -> Tensor:
        out = _branch(fmap, p)
        return reshape(out, lead + (out.shape[-4], m_st.height, m_st.width))

    return HeadOutputs(run(params.cls1), run(params.cls2), exp(run(params.reg)))


# ------------------------------------------------------------------ decoding


def score_map(h: HeadOutputs) -> np.ndarray:
    """``softmax(cls1)_fg * sigmoid(cls2)`` for one (unbatched) output."""
    logits = np.asarray(h.cls1.data, dtype=np.float64)
    fg = 1.0 / (1.0 + np.exp(logits[0] - logits[1]))
    cen = 1.0 / (1.0 + np.exp(-np.asarray(h.cls2.data[0], dtype=np.float64)))
    return fg * cen


def decode_cell(reg: np.ndarray, i: int, j: int, grid: Grid) -> BBox:
    l, t, r, b = (float(v) * grid.stride for v in reg[:, i, j])
    x, y = float(grid.cell_x(j)), float(grid.cell_y(i))
    return BBox.from_corners(x - l, y - t, x + r, y + b)


def decode_bbox(h: HeadOutputs, grid: Grid, window: CropWindow | None = None, scores: np.ndarray | None = None) -> BBox:
    """Box at the best-scoring cell, in search-crop pixels (or frame pixels given ``window``).

    ``scores`` overrides the default joint score map (for windowed/penalised selection).
    """
    scores = score_map(h) if scores is None else scores
    i, j = np.unravel_index(int(np.argmax(scores)), scores.shape)
    box = decode_cell(np.asarray(h.reg.data), int(i), int(j), grid)
    return window.box_to_frame(box) if window is not None else box


# ------------------------------------------------------------------ labels


@dataclass
class LabelTargets:
    cls1: np.ndarray  # (Hr, Wr) int: 1 positive, 0 negative, -1 ignored
    cls2: np.ndarray  # (Hr, Wr) centerness on positives, 0 elsewhere
    reg: np.ndarray  # (4, Hr, Wr) true l/t/r/b in grid units on positives
    positive: np.ndarray  # (Hr, Wr) bool

    @staticmethod
    def stack(items: list["LabelTargets"]) -> "LabelTargets":
        return LabelTargets(*(np.stack([getattr(t, f) for t in items]) for f in ("cls1", "cls2", "reg", "positive")))


def assign_labels(gt: BBox, grid: Grid, center_fraction: float = 0.6) -> LabelTargets:
    """Per-cell supervision for a ground-truth box given in search-crop pixels.

    Positive: cell centre inside the central ``center_fraction`` of the box.
    Negative: centre outside the box. Cells in between are ignored.
    """
    ys, xs = grid.centers()
    x1, y1, x2, y2 = gt.corners()
    cls1 = np.zeros((grid.rows, grid.cols), dtype=np.int64)
    cls2 = np.zeros((grid.rows, grid.cols))
    reg = np.zeros((4, grid.rows, grid.cols))
    positive = np.zeros((grid.rows, grid.cols), dtype=bool)
    if x2 <= 0 or y2 <= 0 or x1 >= grid.search_size or y1 >= grid.search_size:
        return LabelTargets(cls1, cls2, reg, positive)
    l, t, r, b = xs - x1, ys - y1, x2 - xs, y2 - ys
    inside = (l >= 0) & (t >= 0) & (r >= 0) & (b >= 0)
    half = center_fraction / 2
    positive = (np.abs(xs - gt.cx) <= half * gt.w) & (np.abs(ys - gt.cy) <= half * gt.h)
    cls1[~inside] = 0
    cls1[inside] = -1
    cls1[positive] = 1
    with np.errstate(divide="ignore", invalid="ignore"):
        cen = np.sqrt((np.minimum(l, r) / np.maximum(l, r)) * (np.minimum(t, b) / np.maximum(t, b)))
    cls2[positive] = cen[positive]
    reg[:, positive] = np.stack([l, t, r, b])[:, positive] / grid.stride
    return LabelTargets(cls1, cls2, reg, positive)
