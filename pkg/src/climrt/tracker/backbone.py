"""Five-stage plain convolutional feature extractor (AlexNet-style, no normalization)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from climrt.params import he_normal, zeros
from climrt.tensor import DimensionError, Tensor, as_tensor, conv_spatial, relu, reshape
from climrt.tensor.kernels import out_extent


@dataclass
class BackboneConfig:
    widths: tuple[int, ...] = (32, 64, 96, 128, 128)
    strides: tuple[int, ...] = (2, 2, 2, 1, 1)
    kernel: int = 3

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.strides = tuple(int(s) for s in self.strides)
        if len(self.widths) != 5 or len(self.strides) != 5:
            raise ValueError("backbone has exactly five stages")
        if self.strides[4] != 1:
            raise ValueError("stage 5 must keep the stage-4 resolution")

    @property
    def total_stride(self) -> int:
        return int(np.prod(self.strides[:4]))


@dataclass
class BackboneParams:
    weights: list[Tensor]
    biases: list[Tensor]
    config: BackboneConfig = field(default_factory=BackboneConfig, metadata={"param": False})


def backbone_shapes(size: int, config: BackboneConfig) -> list[int]:
    """Spatial extent after each stage for a ``size`` x ``size`` input."""
    pad = config.kernel // 2
    extents = []
    for s in config.strides:
        size = out_extent(size, config.kernel, s, pad)
        extents.append(size)
    return extents


def init_backbone(config: BackboneConfig | None = None, seed: int = 0) -> BackboneParams:
    cfg = config or BackboneConfig()
    rng = np.random.default_rng(seed)
    weights, biases, c_in = [], [], 3
    for c_out in cfg.widths:
        weights.append(he_normal(rng, (c_out, c_in, 1, cfg.kernel, cfg.kernel), c_in * cfg.kernel**2))
        biases.append(zeros((c_out,)))
        c_in = c_out
    return BackboneParams(weights, biases, cfg)


def backbone_forward(img, params: BackboneParams, expected_size: int | None = None) -> tuple[Tensor, Tensor]:
    """Stage-4 and stage-5 features of a channel-first square crop (3, S, S) or (N, 3, S, S)."""
    x = as_tensor(img)
    if x.ndim not in (3, 4) or x.shape[-3] != 3:
        raise DimensionError(f"expected (3, S, S) or (N, 3, S, S), got {x.shape}")
    if x.shape[-1] != x.shape[-2]:
        raise DimensionError(f"crop must be square, got {x.shape[-2:]}")
    if expected_size is not None and x.shape[-1] != expected_size:
        raise DimensionError(f"crop size {x.shape[-1]} != configured {expected_size}")
    batched = x.ndim == 4
    lead = (x.shape[0],) if batched else ()
    h = reshape(x, lead + (3, 1) + x.shape[-2:])
    cfg = params.config
    pad = cfg.kernel // 2
    feats = []
    for w, b, s in zip(params.weights, params.biases, cfg.strides):
        h = relu(conv_spatial(h, w, stride=(s, s), padding=(pad, pad), bias=b))
        feats.append(h)

    def squeeze(t: Tensor) -> Tensor:
        return reshape(t, lead + (t.shape[-4],) + t.shape[-2:])

    return squeeze(feats[3]), squeeze(feats[4])
