"""Toy training on synthetic data: latent-frame pretraining, tracker pretraining, joint tuning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from climrt.climnet import climnet_forward, interframe_loss
from climrt.params import parameters
from climrt.tensor import NonFiniteError, no_grad
from climrt.tracker.geometry import BBox, CropWindow, crop_window, sample_window
from climrt.tracker.heads import LabelTargets, assign_labels
from climrt.tracker.losses import tracking_loss
from climrt.tracker.model import ClimRTParams, climrt_forward, latent_frame, template_features
from climrt.tracker.optim import log_schedule, make_optimizer
from climrt.tracker.track import chw

log = logging.getLogger(__name__)

PHASES = ("climnet", "tracker", "joint")


class TrainingDivergence(RuntimeError):
    def __init__(self, phase: str, step: int, history: list[float]):
        self.phase, self.step, self.history = phase, step, history
        tail = ", ".join(f"{v:.4g}" for v in history[-5:])
        super().__init__(f"loss became non-finite in phase {phase!r} at step {step} (last losses: {tail})")


@dataclass
class TrackingBatch:
    template: np.ndarray  # (N, 3, T, T)
    search: np.ndarray  # (N, 3, S, S)
    prev_search: np.ndarray  # (N, 3, S, S)
    targets: LabelTargets


@dataclass
class ToyDataset:
    """Synthetic sequences (frames, annotation) plus optional interpolation triplets."""

    sequences: list = field(default_factory=list)
    triplets: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None


@dataclass
class TrainConfig:
    phases: tuple[str, ...] = ("joint",)
    steps: int = 300
    batch_size: int = 8
    optimizer: str = "sgd"
    lr: float = 1e-2
    lr_end: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    fixed_batch: bool = False
    max_shift: float = 1.0  # search-window jitter, in units of the feature stride
    template_frame: str = "first"  # or "random"


@dataclass
class TrainResult:
    params: ClimRTParams
    losses: dict[str, list[float]]


def _window_at(box: BBox, cfg, shift: tuple[float, float]) -> CropWindow:
    base = crop_window(box, cfg.search_size, cfg.context, cfg.search_size / cfg.template_size)
    return CropWindow(box.cx + shift[0] * base.scale, box.cy + shift[1] * base.scale, base.side, base.out_size)


def make_tracking_batch(dataset: ToyDataset, params: ClimRTParams, rng: np.random.Generator, size: int, train_cfg: TrainConfig) -> TrackingBatch:
    """Draw ``size`` (template, search, previous search, labels) samples."""
    cfg = params.config
    grid = cfg.grid()
    templates, searches, prevs, targets = [], [], [], []
    for _ in range(size):
        frames, ann = dataset.sequences[int(rng.integers(len(dataset.sequences)))]
        n = len(frames)
        ti = 0 if train_cfg.template_frame == "first" else int(rng.integers(n))
        si = int(rng.integers(1, n)) if n > 1 else 0
        window_z = crop_window(ann.boxes[ti], cfg.template_size, cfg.context)
        templates.append(chw(sample_window(frames[ti], window_z)))
        shift_px = train_cfg.max_shift * grid.stride
        shift = tuple(rng.uniform(-shift_px, shift_px, size=2))
        window_x = _window_at(ann.boxes[si], cfg, shift)
        search = chw(sample_window(frames[si], window_x))
        searches.append(search)
        pi = si - cfg.m
        if pi >= 1:
            prevs.append(chw(sample_window(frames[pi], _window_at(ann.boxes[pi], cfg, shift))))
        else:
            prevs.append(search)
        targets.append(assign_labels(window_x.box_to_crop(ann.boxes[si]), grid))
    return TrackingBatch(np.stack(templates), np.stack(searches), np.stack(prevs), LabelTargets.stack(targets))


def batch_loss(batch: TrackingBatch, params: ClimRTParams, freeze_latent: bool = False):
    """Tracking loss on a batch; ``freeze_latent`` computes the latent frame without gradients."""
    z = template_features(batch.template, params)
    latent = None
    if freeze_latent and params.climnet is not None:
        with no_grad():
            latent = latent_frame(batch.prev_search, batch.search, params).detach()
    heads = climrt_forward(z, batch.search, batch.prev_search, params, latent=latent)
    return tracking_loss(heads, batch.targets, params.config.lambdas)


def _trainable(params: ClimRTParams, phase: str):
    if phase == "climnet":
        return params.climnet
    if phase == "tracker":
        return [params.backbone, params.heads, params.lct, params.proj, params.proj_bias]
    return params


def _triplet_batch(dataset: ToyDataset, rng, size: int):
    first, middle, last = dataset.triplets
    idx = rng.choice(len(first), size=min(size, len(first)), replace=False)
    return first[idx], middle[idx], last[idx]


def train_toy(dataset: ToyDataset, params: ClimRTParams, config: TrainConfig | None = None, progress=None) -> TrainResult:
    """Run the configured phases in order, updating ``params`` in place.

    ``climnet`` minimises the interframe L1 loss on triplets; ``tracker`` minimises
    the tracking loss with the latent network frozen; ``joint`` trains everything on
    the tracking loss. Deterministic for a given seed.
    """
    cfg = config or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    losses: dict[str, list[float]] = {}
    for phase in cfg.phases:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        if phase == "climnet" and (params.climnet is None or dataset.triplets is None):
            log.info("skipping climnet phase (no latent network or no triplets)")
            continue
        history: list[float] = []
        losses[phase] = history
        trainable = _trainable(params, phase)
        opt = make_optimizer(cfg.optimizer, trainable, cfg.lr, cfg.momentum, cfg.weight_decay)
        fixed = None
        if cfg.fixed_batch:
            fixed = _triplet_batch(dataset, rng, cfg.batch_size) if phase == "climnet" else make_tracking_batch(dataset, params, rng, cfg.batch_size, cfg)
        for step in range(cfg.steps):
            opt.zero_grad()
            for p in parameters(params):
                p.grad = None
            try:
                if phase == "climnet":
                    a, mid, b = fixed if fixed is not None else _triplet_batch(dataset, rng, cfg.batch_size)
                    loss = interframe_loss(climnet_forward(a, b, params.climnet), mid)
                else:
                    batch = fixed if fixed is not None else make_tracking_batch(dataset, params, rng, cfg.batch_size, cfg)
                    loss = batch_loss(batch, params, freeze_latent=(phase == "tracker")).total
            except NonFiniteError as exc:
                raise TrainingDivergence(phase, step, history) from exc
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergence(phase, step, history)
            history.append(value)
            if loss.requires_grad:
                loss.backward()
            opt.step(lr=log_schedule(step, cfg.steps, cfg.lr, cfg.lr_end))
            if progress is not None:
                progress(phase, step, value)
    return TrainResult(params, losses)
