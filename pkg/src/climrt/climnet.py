"""Latent-frame interpolation network.

The two input frames are stacked on the time axis (T=2). Four residual encoder
blocks (the last three downsample by 2) feed three upsampling fusion blocks with
channel-concatenated skip connections; a pair of 2-D convolutions folds time
into channels and emits an RGB frame in [0, 1].

Feature layout is ``(C, T, H, W)`` or batched ``(N, C, T, H, W)``; images are
channel-first ``(3, H, W)`` / ``(N, 3, H, W)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from climrt.params import he_normal, param, zeros
from climrt.tensor import (
    GeometryError,
    DimensionError,
    Tensor,
    absolute,
    as_tensor,
    concat,
    conv3d,
    conv_spatial,
    conv_temporal,
    conv_transpose3d,
    depthwise_conv3d,
    index,
    matmul,
    mean,
    pool_global,
    relu,
    reshape,
    sigmoid,
    stack,
    sum_,
)

_STATIC = {"param": False}

# ------------------------------------------------------------------ params


@dataclass
class GhostParams:
    primary: Tensor  # (ceil(C_out/2), C_in, 1, 3, 3)
    cheap: Tensor  # (C_out - ceil(C_out/2), 1, 3, 3), one kernel per mapped channel

    @property
    def c_out(self) -> int:
        return self.primary.shape[0] + self.cheap.shape[0]


@dataclass
class STConvParams:
    ghost: GhostParams
    temporal: Tensor  # (C_out, C_out, 3, 1, 1)


@dataclass
class GstcBlockParams:
    conv1: STConvParams
    conv2: STConvParams
    shortcut: Tensor | None = None  # (C_out, C_in, 1, 1, 1)
    stride: int = field(default=1, metadata=_STATIC)


@dataclass
class PlainBlockParams:
    """Residual block of two dense 3x3x3 convolutions (ablation stand-in for GSTC)."""

    conv1: Tensor
    conv2: Tensor
    shortcut: Tensor | None = None
    stride: int = field(default=1, metadata=_STATIC)


@dataclass
class GateParams:
    weight: Tensor  # (C, C)
    bias: Tensor  # (C,)


@dataclass
class MsFusionParams:
    up: Tensor  # (C_in, C_out, 1, 2, 2)
    up_bias: Tensor  # (C_out,)
    mod_weight: Tensor | None = None  # (C_out, C_in); None disables modulation
    mod_bias: Tensor | None = None


@dataclass
class FeatureTransformParams:
    fuse: Tensor  # (C_mid, C*T, 1, 3, 3)
    fuse_bias: Tensor
    emit: Tensor  # (3, C_mid, 1, 3, 3)
    emit_bias: Tensor


@dataclass
class ClimNetConfig:
    widths: tuple[int, ...] = (16, 32, 64, 128)
    gating: bool = True
    encoder_block: str = "gstc"  # or "plain"
    decoder_block: str = "ms"  # or "plain"
    time_steps: int = 2

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != 4:
            raise ValueError("ClimNet has exactly four encoder stages")
        if self.encoder_block not in ("gstc", "plain") or self.decoder_block not in ("ms", "plain"):
            raise ValueError("unknown block variant")


@dataclass
class ClimNetParams:
    encoder: list
    decoder: list[MsFusionParams]
    gates: list[GateParams]
    transform: FeatureTransformParams
    config: ClimNetConfig = field(default_factory=ClimNetConfig, metadata=_STATIC)


# ------------------------------------------------------------------ blocks


def _channels(x: Tensor, start: int, stop: int) -> Tensor:
    return index(x, (Ellipsis, slice(start, stop), slice(None), slice(None), slice(None)))


def ghost_spatial_conv(x: Tensor, p: GhostParams, stride: int = 1) -> Tensor:
    """Intrinsic 1x3x3 conv to half the channels, cheap per-channel 1x3x3 map for the rest."""
    intrinsic = conv_spatial(x, p.primary, stride=(stride, stride), padding=(1, 1))
    n_map = p.cheap.shape[0]
    if n_map == 0:
        return intrinsic
    mapped = depthwise_conv3d(_channels(intrinsic, 0, n_map), p.cheap, padding=(0, 1, 1))
    return concat([intrinsic, mapped], axis=-4)


def stconv(x: Tensor, p: STConvParams, stride: int = 1) -> Tensor:
    """Ghost 1x3x3 spatial conv followed by a 3x1x1 temporal conv."""
    return conv_temporal(ghost_spatial_conv(x, p.ghost, stride), p.temporal, padding_t=1)


def _shortcut(x: Tensor, proj: Tensor | None, stride: int) -> Tensor:
    if proj is None:
        return x
    return conv3d(x, proj, stride=(1, stride, stride))


def gstc_block(x: Tensor, p: GstcBlockParams) -> Tensor:
    branch = stconv(relu(stconv(x, p.conv1, p.stride)), p.conv2)
    short = _shortcut(x, p.shortcut, p.stride)
    if short.shape != branch.shape:
        raise DimensionError(f"residual shapes differ: {short.shape} vs {branch.shape}")
    return short + branch


def plain_block(x: Tensor, p: PlainBlockParams) -> Tensor:
    h = relu(conv3d(x, p.conv1, stride=(1, p.stride, p.stride), padding=1))
    branch = conv3d(h, p.conv2, padding=1)
    return _shortcut(x, p.shortcut, p.stride) + branch


def _channel_vector(x: Tensor) -> Tensor:
    """Spatiotemporal average pool as a row vector: (1, C) or (N, 1, C)."""
    pooled = pool_global(x, "avg", "spatiotemporal")
    c = x.shape[-4]
    return reshape(pooled, (1, c) if x.ndim == 4 else (x.shape[0], 1, c))


def _per_channel(coef: Tensor, like: Tensor) -> Tensor:
    c = coef.shape[-1]
    return reshape(coef, (c, 1, 1, 1) if like.ndim == 4 else (like.shape[0], c, 1, 1, 1))


def feature_gate(x: Tensor, p: GateParams) -> Tensor:
    """``sigmoid(W @ avgpool(x) + b)`` rescales each channel of ``x``."""
    c = x.shape[-4]
    if p.weight.shape != (c, c):
        raise DimensionError(f"gate expects {p.weight.shape[1]} channels, got {c}")
    coef = sigmoid(matmul(_channel_vector(x), p.weight.T) + p.bias)
    return x * _per_channel(coef, x)


def ms_fusion(x: Tensor, p: MsFusionParams) -> Tensor:
    """Upsample by 2 in H and W, modulated per channel by a pooled coefficient of the input."""
    up = relu(conv_transpose3d(x, p.up, stride=(1, 2, 2), bias=p.up_bias))
    if p.mod_weight is None:
        return up
    if p.mod_weight.shape[0] != up.shape[-4] or p.mod_weight.shape[1] != x.shape[-4]:
        raise DimensionError("modulation width does not match the upsampled channels")
    coef = sigmoid(matmul(_channel_vector(x), p.mod_weight.T) + p.mod_bias)
    return _per_channel(coef, up) * up


def skip_connect(decoder: Tensor, encoder: Tensor) -> Tensor:
    if decoder.shape[-3:] != encoder.shape[-3:] or decoder.ndim != encoder.ndim:
        raise DimensionError(f"skip connection shape mismatch: {decoder.shape} vs {encoder.shape}")
    return concat([decoder, encoder], axis=-4)


def feature_transform(x: Tensor, p: FeatureTransformParams) -> Tensor:
    """Fold time into channels, fuse, and emit a sigmoid RGB frame (3, H, W)."""
    batched = x.ndim == 5
    c, t, h, w = x.shape[-4:]
    folded = reshape(x, ((x.shape[0],) if batched else ()) + (c * t, 1, h, w))
    mid = relu(conv_spatial(folded, p.fuse, padding=(1, 1), bias=p.fuse_bias))
    rgb = sigmoid(conv_spatial(mid, p.emit, padding=(1, 1), bias=p.emit_bias))
    return reshape(rgb, ((x.shape[0],) if batched else ()) + (3, h, w))


# ------------------------------------------------------------------ network


def check_frame_size(height: int, width: int) -> None:
    if height % 8 or width % 8:
        raise GeometryError(f"frame size {height}x{width} must be divisible by 8")


def climnet_features(frame_a, frame_b, params: ClimNetParams, trace: list | None = None) -> Tensor:
    """Encoder-decoder pass up to (not including) the feature transform."""
    a, b = as_tensor(frame_a), as_tensor(frame_b)
    if a.shape != b.shape:
        raise DimensionError(f"frames differ in shape: {a.shape} vs {b.shape}")
    if a.shape[-3] != 3 or a.ndim not in (3, 4):
        raise DimensionError(f"expected (3, H, W) or (N, 3, H, W) frames, got {a.shape}")
    check_frame_size(*a.shape[-2:])
    cfg = params.config
    x = stack([a, b], axis=a.ndim - 2)  # -> (.., 3, 2, H, W)
    block = gstc_block if cfg.encoder_block == "gstc" else plain_block
    skips = []
    for i, blk in enumerate(params.encoder):
        x = block(x, blk)
        if cfg.gating:
            x = feature_gate(x, params.gates[i])
        if trace is not None:
            trace.append((f"encoder{i + 1}", x.shape))
        skips.append(x)
    for j, fuse in enumerate(params.decoder):
        x = ms_fusion(x, fuse)
        if cfg.gating:
            x = feature_gate(x, params.gates[len(params.encoder) + j])
        x = skip_connect(x, skips[-2 - j])
        if trace is not None:
            trace.append((f"decoder{j + 1}", x.shape))
    return x


def climnet_forward(frame_a, frame_b, params: ClimNetParams, trace: list | None = None) -> Tensor:
    """Latent frame between ``frame_a`` and ``frame_b``; same size, values in [0, 1]."""
    out = feature_transform(climnet_features(frame_a, frame_b, params, trace), params.transform)
    if trace is not None:
        trace.append(("latent", out.shape))
    return out


def interframe_loss(predicted, truth) -> Tensor:
    """Batch mean of per-clip L1 norms; unbatched input counts as one clip."""
    p, t = as_tensor(predicted), as_tensor(truth)
    if p.shape != t.shape:
        raise DimensionError(f"prediction {p.shape} vs truth {t.shape}")
    n = p.shape[0] if p.ndim == 4 else 1
    return sum_(absolute(p - t)) * (1.0 / n)


# ------------------------------------------------------------------ init


def _ghost(rng, c_in: int, c_out: int) -> GhostParams:
    intrinsic = math.ceil(c_out / 2)
    return GhostParams(
        primary=he_normal(rng, (intrinsic, c_in, 1, 3, 3), c_in * 9),
        cheap=he_normal(rng, (c_out - intrinsic, 1, 3, 3), 9, gain=1.0),
    )


def _stconv(rng, c_in: int, c_out: int, out_gain: float = 2.0) -> STConvParams:
    return STConvParams(_ghost(rng, c_in, c_out), he_normal(rng, (c_out, c_out, 3, 1, 1), c_out * 3, gain=out_gain))


def init_climnet(config: ClimNetConfig | None = None, seed: int = 0) -> ClimNetParams:
    cfg = config or ClimNetConfig()
    rng = np.random.default_rng(seed)
    w = cfg.widths
    encoder = []
    c_in = 3
    for i, c_out in enumerate(w):
        stride = 1 if i == 0 else 2
        shortcut = None
        if stride != 1 or c_in != c_out:
            shortcut = he_normal(rng, (c_out, c_in, 1, 1, 1), c_in, gain=1.0)
        if cfg.encoder_block == "gstc":
            # Small second branch keeps each block close to its shortcut at init.
            encoder.append(GstcBlockParams(_stconv(rng, c_in, c_out), _stconv(rng, c_out, c_out, 0.1), shortcut, stride))
        else:
            encoder.append(
                PlainBlockParams(
                    he_normal(rng, (c_out, c_in, 3, 3, 3), c_in * 27),
                    he_normal(rng, (c_out, c_out, 3, 3, 3), c_out * 27, gain=0.1),
                    shortcut,
                    stride,
                )
            )
        c_in = c_out
    decoder = []
    widths_out = []
    c_in = w[3]
    for c_skip in (w[2], w[1], w[0]):
        c_out = c_skip
        fuse = MsFusionParams(he_normal(rng, (c_in, c_out, 1, 2, 2), c_in), zeros((c_out,)))
        if cfg.decoder_block == "ms":
            fuse.mod_weight = he_normal(rng, (c_out, c_in), c_in, gain=0.1)
            fuse.mod_bias = zeros((c_out,))
        decoder.append(fuse)
        widths_out.append(c_out)
        c_in = c_out + c_skip
    gates = [
        GateParams(he_normal(rng, (c, c), c, gain=0.1), param(np.ones(c)))
        for c in list(w) + widths_out
    ]
    folded = c_in * cfg.time_steps
    mid = w[0]
    transform = FeatureTransformParams(
        he_normal(rng, (mid, folded, 1, 3, 3), folded * 9),
        zeros((mid,)),
        he_normal(rng, (3, mid, 1, 3, 3), mid * 9, gain=1.0),
        zeros((3,)),
    )
    return ClimNetParams(encoder, decoder, gates, transform, cfg)
