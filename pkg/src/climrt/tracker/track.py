"""Per-frame tracking loop."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from climrt.tensor import Tensor, no_grad
from climrt.tracker.geometry import BBox, crop_patch, crop_window, sample_window
from climrt.tracker.heads import decode_bbox, score_map
from climrt.tracker.model import ClimRTParams, climrt_forward, template_features


def chw(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(img, (2, 0, 1)), dtype=np.float32)


@dataclass
class TrackState:
    template: tuple[Tensor, Tensor]  # stage-4/5 template features
    box: BBox
    frame_index: int
    m: int
    crops: dict[int, np.ndarray] = field(default_factory=dict)  # search crops by frame index
    prev_index: int | None = None  # frame whose crop fed the latent network last step
    latent: np.ndarray | None = None

    @property
    def warm(self) -> bool:
        return self.prev_index is not None


def init_track(frame: np.ndarray, box: BBox, params: ClimRTParams) -> TrackState:
    cfg = params.config
    z = chw(crop_patch(frame, box, cfg.context, cfg.template_size))
    with no_grad():
        feats = template_features(z, params)
    return TrackState(feats, box, 0, cfg.m)


def _cosine_window(rows: int, cols: int) -> np.ndarray:
    return np.outer(np.hanning(rows + 2)[1:-1], np.hanning(cols + 2)[1:-1])


def track_step(state: TrackState, frame: np.ndarray, params: ClimRTParams) -> tuple[BBox, TrackState]:
    """Locate the target in ``frame`` (the frame after ``state.frame_index``)."""
    cfg = params.config
    t = state.frame_index + 1
    window = crop_window(state.box, cfg.search_size, cfg.context, cfg.search_size / cfg.template_size)
    search = chw(sample_window(frame, window))
    prev_index = t - state.m
    if prev_index >= 1 and prev_index in state.crops:
        prev = state.crops[prev_index]
    else:
        prev_index, prev = None, search
    with no_grad():
        heads, latent = climrt_forward(state.template, search, prev, params, return_latent=True)
    scores = score_map(heads)
    if cfg.window_influence > 0:
        scores = (1 - cfg.window_influence) * scores + cfg.window_influence * _cosine_window(*scores.shape)
    found = decode_bbox(heads, cfg.grid(), window, scores=scores)
    height, width = frame.shape[:2]
    lr = cfg.size_lr
    w = float(np.clip((1 - lr) * state.box.w + lr * found.w, 4.0, width))
    h = float(np.clip((1 - lr) * state.box.h + lr * found.h, 4.0, height))
    box = BBox(float(np.clip(found.cx, 0, width)), float(np.clip(found.cy, 0, height)), w, h)
    crops = {k: v for k, v in state.crops.items() if k > t - state.m}
    crops[t] = search
    return box, replace(state, box=box, frame_index=t, crops=crops, prev_index=prev_index,
        latent=None if latent is None else np.array(latent.data),
    )


class ClimRTTracker:
    """Stateful wrapper with the ``init(frame, box)`` / ``update(frame)`` protocol."""

    name = "ClimRT"

    def __init__(self, params: ClimRTParams):
        self.params = params
        self.state: TrackState | None = None

    def init(self, frame: np.ndarray, box: BBox) -> None:
        self.state = init_track(frame, box, self.params)

    def update(self, frame: np.ndarray) -> BBox:
        box, self.state = track_step(self.state, frame, self.params)
        return box
