"""Synthetic aerial-style sequences with exact ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from climrt.tensor import kernels
from climrt.tracker.geometry import BBox


class SceneConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OccluderEvent:
    """Full-height vertical bar drawn over frames ``start <= t < end``."""

    start: int
    end: int
    x: float
    width: float


@dataclass
class SceneConfig:
    frame_size: tuple[int, int] = (128, 128)  # (H, W)
    target_size: tuple[float, float] = (16.0, 16.0)  # (w, h) at frame 0
    target_color: tuple[float, float, float] = (0.9, 0.25, 0.2)
    start_center: tuple[float, float] = (40.0, 64.0)
    velocity: tuple[float, float] = (1.0, 0.0)  # px / frame
    aspect_amplitude: float = 0.0  # w/h ratio swings by a factor of (1 +- amplitude)
    aspect_period: float = 20.0
    occluders: tuple[OccluderEvent, ...] = ()
    occluder_color: tuple[float, float, float] = (0.15, 0.15, 0.15)
    background_contrast: float = 0.15
    texture_seed: int | None = None  # defaults to the generation seed
    length: int = 30
    aspect_flag_ratio: float = 1.2


@dataclass
class SequenceAnnotation:
    boxes: list[BBox]
    occluded: np.ndarray
    aspect_change: np.ndarray

    def __len__(self) -> int:
        return len(self.boxes)

    def attribute(self, name: str) -> np.ndarray:
        return {"occluded": self.occluded, "aspect_change": self.aspect_change}[name]


ATTRIBUTES = ("occluded", "aspect_change")


def _aspect(cfg: SceneConfig, t: int) -> float:
    if cfg.aspect_amplitude == 0:
        return 1.0
    return 1.0 + cfg.aspect_amplitude * math.sin(2 * math.pi * t / cfg.aspect_period)


def box_at(cfg: SceneConfig, t: int) -> BBox:
    """Ground truth at frame ``t``: linear motion, area-preserving aspect modulation."""
    a = _aspect(cfg, t)
    w0, h0 = cfg.target_size
    return BBox(
        cfg.start_center[0] + cfg.velocity[0] * t,
        cfg.start_center[1] + cfg.velocity[1] * t,
        w0 * math.sqrt(a),
        h0 / math.sqrt(a),
    )


def validate(cfg: SceneConfig) -> None:
    height, width = cfg.frame_size
    if cfg.length < 1:
        raise SceneConfigError("sequence length must be positive")
    if not 0 <= cfg.aspect_amplitude < 1:
        raise SceneConfigError("aspect amplitude must lie in [0, 1)")
    for t in range(cfg.length):
        x1, y1, x2, y2 = box_at(cfg, t).corners()
        if x1 < 1 or y1 < 1 or x2 > width - 1 or y2 > height - 1:
            raise SceneConfigError(f"target leaves the frame interior at t={t}")
    for ev in cfg.occluders:
        if ev.width <= 0 or ev.end <= ev.start:
            raise SceneConfigError(f"empty occluder event {ev}")


def _background(cfg: SceneConfig, seed: int) -> np.ndarray:
    height, width = cfg.frame_size
    rng = np.random.default_rng(seed)
    coarse = rng.standard_normal((height // 16 + 2, width // 16 + 2, 3))
    xs = np.arange(width) / 16.0 + 0.5
    ys = np.arange(height) / 16.0 + 0.5
    smooth = kernels.bilinear_sample(coarse, np.zeros(3), xs, ys)
    return np.clip(0.5 + cfg.background_contrast * smooth, 0.0, 1.0)


def _fill_mask(box: BBox, height: int, width: int) -> np.ndarray:
    x1, y1, x2, y2 = box.corners()
    cx = np.arange(width) + 0.5
    cy = np.arange(height) + 0.5
    return ((cy >= y1) & (cy < y2))[:, None] & ((cx >= x1) & (cx < x2))[None, :]


def generate_sequence(cfg: SceneConfig, seed: int = 0) -> tuple[list[np.ndarray], SequenceAnnotation]:
    """Render ``cfg.length`` frames (H, W, 3) quantised to 8 bits, plus annotation."""
    validate(cfg)
    height, width = cfg.frame_size
    background = _background(cfg, seed if cfg.texture_seed is None else cfg.texture_seed)
    frames, boxes = [], []
    occluded = np.zeros(cfg.length, dtype=bool)
    aspect = np.zeros(cfg.length, dtype=bool)
    ratio0 = cfg.target_size[0] / cfg.target_size[1]
    for t in range(cfg.length):
        box = box_at(cfg, t)
        img = background.copy()
        img[_fill_mask(box, height, width)] = cfg.target_color
        x1, _, x2, _ = box.corners()
        for ev in cfg.occluders:
            if ev.start <= t < ev.end:
                cols = (np.arange(width) + 0.5 >= ev.x) & (np.arange(width) + 0.5 < ev.x + ev.width)
                img[:, cols] = cfg.occluder_color
                if ev.x < x2 and ev.x + ev.width > x1:
                    occluded[t] = True
        change = (box.w / box.h) / ratio0
        aspect[t] = change >= cfg.aspect_flag_ratio or change <= 1 / cfg.aspect_flag_ratio
        frames.append((np.rint(img * 255) / 255).astype(np.float32))
        boxes.append(box)
    return frames, SequenceAnnotation(boxes, occluded, aspect)


def random_scene(rng: np.random.Generator, length: int = 30, frame_size=(128, 128), challenges: bool = True) -> SceneConfig:
    """A valid scene with random colour, motion, and (optionally) occlusion / aspect change."""
    height, width = frame_size
    for _ in range(100):
        w = float(rng.uniform(14, 22))
        h = float(rng.uniform(14, 22))
        v = rng.uniform(-1.5, 1.5, size=2)
        start = (float(rng.uniform(w, width - w)), float(rng.uniform(h, height - h)))
        occluders = ()
        amp = 0.0
        if challenges:
            amp = float(rng.choice([0.0, 0.35]))
            if rng.random() < 0.5:
                t0 = int(rng.integers(length // 3, 2 * length // 3))
                cx = start[0] + v[0] * t0
                occluders = (OccluderEvent(t0, t0 + 4, cx - 3.0, 6.0),)
        cfg = SceneConfig(
            frame_size=(height, width),
            target_size=(w, h),
            target_color=tuple(float(c) for c in rng.uniform(0.6, 1.0, 3) * rng.permutation([1.0, 0.4, 0.2])),
            start_center=start,
            velocity=(float(v[0]), float(v[1])),
            aspect_amplitude=amp,
            aspect_period=float(rng.uniform(12, 24)),
            occluders=occluders,
            length=length,
        )
        try:
            validate(cfg)
            return cfg
        except SceneConfigError:
            continue
    raise SceneConfigError("could not draw a valid random scene")


def square_triplets(n: int, size: int = 32, seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``n`` (first, middle, last) frames of a square translating at constant integer velocity.

    Returned as channel-first float32 arrays of shape (n, 3, size, size). The
    background is a fixed dark grey; square colour, size and velocity vary.
    """
    rng = np.random.default_rng(seed)
    out = np.empty((3, n, 3, size, size), dtype=np.float32)
    margin = 2
    for i in range(n):
        side = int(rng.integers(size // 5, size // 3 + 1))
        color = 0.5 + 0.5 * rng.random(3)
        v = rng.integers(-3, 4, size=2)
        lo = margin + np.maximum(0, -2 * v)
        hi = size - margin - side - np.maximum(0, 2 * v)
        x0 = np.array([rng.integers(lo[k], hi[k] + 1) for k in range(2)])
        for k in range(3):
            img = np.full((3, size, size), 0.2, dtype=np.float32)
            x, y = x0 + v * k
            img[:, y : y + side, x : x + side] = color[:, None, None]
            out[k, i] = img
    return out[0], out[1], out[2]
