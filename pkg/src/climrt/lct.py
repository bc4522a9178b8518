"""Location-continuity Transformer.

Correlation responses become token maps of shape ``(P, C)`` (``P = H * W``,
row ``r`` is position ``(r // W, r % W)``), optionally batched ``(N, P, C)``.
The encoder fuses the stage-4 and stage-5 search maps; the decoder
self-attends over the latent-frame map and cross-attends to the encoder output.
Sublayers are post-norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from climrt.params import he_normal, param, zeros
from climrt.tensor import (
    DimensionError,
    Tensor,
    add,
    as_tensor,
    depthwise_conv3d,
    layer_norm,
    matmul,
    pool_global,
    relu,
    reshape,
    sigmoid,
    softmax,
    transpose,
)

_STATIC = {"param": False}
TAGS = ("s4", "s5", "t5")


@dataclass
class SimilarityMap:
    tokens: Tensor  # (P, C) or (N, P, C)
    height: int
    width: int
    tag: str = "s5"

    def __post_init__(self):
        if self.tokens.shape[-2] != self.height * self.width:
            raise DimensionError(f"{self.tokens.shape[-2]} rows for a {self.height}x{self.width} grid")

    @property
    def positions(self) -> int:
        return self.height * self.width

    @property
    def channels(self) -> int:
        return self.tokens.shape[-1]

    def with_tokens(self, tokens: Tensor, tag: str | None = None) -> "SimilarityMap":
        return SimilarityMap(tokens, self.height, self.width, tag or self.tag)


def _tok(m) -> Tensor:
    return m.tokens if isinstance(m, SimilarityMap) else as_tensor(m)


@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    heads: int = field(default=4, metadata=_STATIC)


@dataclass
class FFNParams:
    w1: Tensor  # (C, ffn_mult * C)
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class NormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class LaeieParams:
    coef_weight: Tensor  # (C, C) channel mixing after pooling
    coef_bias: Tensor
    attn: AttentionParams
    adjust_weight: Tensor  # 1x1 conv on the attention output
    adjust_bias: Tensor
    norm1: NormParams
    ffn: FFNParams
    norm2: NormParams


@dataclass
class CalidParams:
    self_attn: AttentionParams
    norm1: NormParams
    cross_attn: AttentionParams
    norm2: NormParams
    ffn: FFNParams
    norm3: NormParams


@dataclass
class LctConfig:
    token_dim: int = 128
    heads: int = 4
    ffn_mult: int = 4
    modulation_source: str = "m5"  # "m4" puts the stage-4 map in the modulated term

    def __post_init__(self):
        if self.token_dim % self.heads:
            raise ValueError(f"{self.heads} heads do not divide width {self.token_dim}")
        if self.modulation_source not in ("m4", "m5"):
            raise ValueError("modulation_source must be 'm4' or 'm5'")


@dataclass
class LctParams:
    proj4: Tensor  # (C_tok, C_stage4)
    proj4_bias: Tensor
    proj5: Tensor  # shared by the search and latent stage-5 maps
    proj5_bias: Tensor
    laeie: LaeieParams
    calid: CalidParams
    config: LctConfig = field(default_factory=LctConfig, metadata=_STATIC)


# ------------------------------------------------------------------ token maps


def cross_correlate(template_feat, search_feat) -> Tensor:
    """Depthwise correlation of ``(C, h, w)`` template over ``(C, H, W)`` search.

    Both may carry a leading batch axis. Output is ``(C, H-h+1, W-w+1)``.
    """
    z, x = as_tensor(template_feat), as_tensor(search_feat)
    if z.ndim != x.ndim or z.ndim not in (3, 4):
        raise DimensionError(f"template {z.shape} / search {x.shape} must both be (C,H,W) or (N,C,H,W)")
    if z.shape[-3] != x.shape[-3]:
        raise DimensionError("template and search channel counts differ")
    if z.shape[-2] > x.shape[-2] or z.shape[-1] > x.shape[-1]:
        raise DimensionError(f"template {z.shape[-2:]} larger than search {x.shape[-2:]}")
    if z.ndim == 3:
        c, h, w = z.shape
        out = depthwise_conv3d(reshape(x, (c, 1) + x.shape[-2:]), reshape(z, (c, 1, h, w)))
        return reshape(out, (c,) + out.shape[-2:])
    n, c, h, w = z.shape
    out = depthwise_conv3d(reshape(x, (n, c, 1) + x.shape[-2:]), reshape(z, (n, c, 1, h, w)))
    return reshape(out, (n, c) + out.shape[-2:])


def standardize_response(response, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance each channel of a ``(C, H, W)`` response over positions.

    Correlation responses carry a large position-independent offset; without this
    the per-token LayerNorm in the sublayers leaves little localization signal.
    """
    r = as_tensor(response)
    hw = r.shape[-2] * r.shape[-1]
    flat = reshape(r, r.shape[:-2] + (hw,))
    one = Tensor(np.ones(hw, dtype=r.dtype), dtype=r.dtype)
    zero = Tensor(np.zeros(hw, dtype=r.dtype), dtype=r.dtype)
    return reshape(layer_norm(flat, one, zero, eps), r.shape)


def to_token_map(response, weight: Tensor | None = None, bias: Tensor | None = None, tag: str = "s5") -> SimilarityMap:
    """1x1-project a ``(C, H, W)`` response to ``weight.shape[0]`` channels and flatten to rows."""
    r = as_tensor(response)
    batched = r.ndim == 4
    c, h, w = r.shape[-3:]
    flat = reshape(r, ((r.shape[0],) if batched else ()) + (c, h * w))
    if weight is not None:
        if weight.shape[1] != c:
            raise DimensionError(f"projection expects {weight.shape[1]} channels, got {c}")
        flat = matmul(weight, flat)
        if bias is not None:
            flat = flat + reshape(bias, (weight.shape[0], 1))
    return SimilarityMap(transpose(flat), h, w, tag)


def positional_encoding(positions: int, channels: int, dtype=np.float32) -> np.ndarray:
    """Fixed sinusoidal table over the flattened position index."""
    pos = np.arange(positions, dtype=np.float64)[:, None]
    pair = np.arange(0, channels, 2, dtype=np.float64)
    freq = np.power(10000.0, -pair / channels)
    table = np.zeros((positions, channels))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq[: channels // 2])
    return table.astype(dtype)


def add_positional(m, pe=None):
    tokens = _tok(m)
    p, c = tokens.shape[-2:]
    table = positional_encoding(p, c, tokens.dtype) if pe is None else np.asarray(_tok(pe).data if isinstance(pe, (Tensor, SimilarityMap)) else pe)
    if table.shape != (p, c):
        raise DimensionError(f"encoding {table.shape} does not match map {(p, c)}")
    out = add(tokens, table.astype(tokens.dtype))
    return m.with_tokens(out) if isinstance(m, SimilarityMap) else out


# ------------------------------------------------------------------ encoder


def encoder_coefficient(m4p, m5p, weight: Tensor, bias: Tensor) -> Tensor:
    """``sigmoid(W(maxpool(m4p) + avgpool(m5p)))`` pooled over positions, shape (.., 1, C)."""
    t4, t5 = _tok(m4p), _tok(m5p)
    if t4.shape != t5.shape:
        raise DimensionError(f"maps differ: {t4.shape} vs {t5.shape}")
    pooled = pool_global(t4, "max", axes=(-2,)) + pool_global(t5, "avg", axes=(-2,))
    return sigmoid(matmul(pooled, weight) + bias)


def encoder_fuse(m5p, w, modulated=None):
    """``m5p + w * m5p``; pass ``modulated`` to replace the second ``m5p``."""
    base = _tok(m5p)
    mod = base if modulated is None else _tok(modulated)
    out = base + as_tensor(w, dtype=base.dtype) * mod
    return m5p.with_tokens(out, "s45") if isinstance(m5p, SimilarityMap) else out


# ------------------------------------------------------------------ attention


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, p, c = x.shape
    return transpose(reshape(x, tuple(lead) + (p, heads, c // heads)), tuple(range(len(lead))) + tuple(len(lead) + i for i in (1, 0, 2)))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, p, d = x.shape
    merged = transpose(x, tuple(range(len(lead))) + tuple(len(lead) + i for i in (1, 0, 2)))
    return reshape(merged, tuple(lead) + (p, h * d))


def multi_head_attention(q, k, v, p: AttentionParams):
    """Scaled dot-product attention per head, heads concatenated then projected."""
    tq, tk, tv = _tok(q), _tok(k), _tok(v)
    c = tq.shape[-1]
    if c % p.heads:
        raise DimensionError(f"{p.heads} heads do not divide width {c}")
    if tk.shape[-2] != tv.shape[-2]:
        raise DimensionError("keys and values need the same number of positions")
    d = c // p.heads
    qh = _split_heads(matmul(tq, p.wq) + p.bq, p.heads)
    kh = _split_heads(matmul(tk, p.wk) + p.bk, p.heads)
    vh = _split_heads(matmul(tv, p.wv) + p.bv, p.heads)
    scores = matmul(qh, transpose(kh)) * (1.0 / np.sqrt(d))
    out = matmul(_merge_heads(matmul(softmax(scores, axis=-1), vh)), p.wo) + p.bo
    return q.with_tokens(out) if isinstance(q, SimilarityMap) else out


def _norm(x: Tensor, p: NormParams) -> Tensor:
    return layer_norm(x, p.gamma, p.beta)


def _ffn(x: Tensor, p: FFNParams) -> Tensor:
    return matmul(relu(matmul(x, p.w1) + p.b1), p.w2) + p.b2


def laeie_forward(m4p, m5p, params: LaeieParams, modulation_source: str = "m5"):
    coef = encoder_coefficient(m4p, m5p, params.coef_weight, params.coef_bias)
    fused = _tok(encoder_fuse(m5p, coef, m4p if modulation_source == "m4" else None))
    attended = multi_head_attention(fused, _tok(m4p), _tok(m4p), params.attn)
    h = _norm(fused + (matmul(attended, params.adjust_weight) + params.adjust_bias), params.norm1)
    out = _norm(h + _ffn(h, params.ffn), params.norm2)
    return m5p.with_tokens(out, "enc") if isinstance(m5p, SimilarityMap) else out


def calid_forward(mt5p, encoder_out, params: CalidParams):
    t = _tok(mt5p)
    enhanced = _norm(t + multi_head_attention(t, t, t, params.self_attn), params.norm1)
    mem = _tok(encoder_out)
    fused = _norm(enhanced + multi_head_attention(enhanced, mem, mem, params.cross_attn), params.norm2)
    out = _norm(fused + _ffn(fused, params.ffn), params.norm3)
    return mt5p.with_tokens(out, "st") if isinstance(mt5p, SimilarityMap) else out


def lct_forward(m_s4, m_s5, m_t5, params: LctParams) -> SimilarityMap:
    """Raw correlation responses -> spatial-temporal token map for the heads."""
    cfg = params.config
    m_s4, m_s5, m_t5 = (standardize_response(m) for m in (m_s4, m_s5, m_t5))
    m4 = add_positional(to_token_map(m_s4, params.proj4, params.proj4_bias, "s4"))
    m5 = add_positional(to_token_map(m_s5, params.proj5, params.proj5_bias, "s5"))
    mt = add_positional(to_token_map(m_t5, params.proj5, params.proj5_bias, "t5"))
    enc = laeie_forward(m4, m5, params.laeie, cfg.modulation_source)
    return calid_forward(mt, enc, params.calid)


# ------------------------------------------------------------------ init


def init_attention(rng, c: int, heads: int, out_gain: float = 0.01) -> AttentionParams:
    """Small output projection: each attention sublayer starts close to its residual."""

    def lin(gain=1.0):
        return he_normal(rng, (c, c), c, gain=gain), zeros((c,))

    (wq, bq), (wk, bk), (wv, bv), (wo, bo) = lin(), lin(), lin(), lin(out_gain)
    return AttentionParams(wq, bq, wk, bk, wv, bv, wo, bo, heads)


def init_ffn(rng, c: int, mult: int, out_gain: float = 0.01) -> FFNParams:
    return FFNParams(
        he_normal(rng, (c, mult * c), c), zeros((mult * c,)), he_normal(rng, (mult * c, c), mult * c, gain=out_gain), zeros((c,))
    )


def init_norm(c: int) -> NormParams:
    return NormParams(param(np.ones(c)), zeros((c,)))


def init_lct(c4: int, c5: int, config: LctConfig | None = None, seed: int = 0) -> LctParams:
    cfg = config or LctConfig()
    rng = np.random.default_rng(seed)
    c, h = cfg.token_dim, cfg.heads
    laeie = LaeieParams(
        he_normal(rng, (c, c), c, gain=1.0),
        zeros((c,)),
        init_attention(rng, c, h),
        he_normal(rng, (c, c), c, gain=1.0),
        zeros((c,)),
        init_norm(c),
        init_ffn(rng, c, cfg.ffn_mult),
        init_norm(c),
    )
    calid = CalidParams(
        init_attention(rng, c, h), init_norm(c), init_attention(rng, c, h), init_norm(c), init_ffn(rng, c, cfg.ffn_mult), init_norm(c)
    )
    return LctParams(
        he_normal(rng, (c, c4), c4, gain=1.0), zeros((c,)), he_normal(rng, (c, c5), c5, gain=1.0), zeros((c,)), laeie, calid, cfg
    )
