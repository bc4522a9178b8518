"""Full tracker: backbone, latent-frame network, LCT and heads, plus ablation variants."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from climrt.climnet import ClimNetConfig, ClimNetParams, climnet_forward, init_climnet
from climrt.lct import LctConfig, LctParams, cross_correlate, init_lct, lct_forward, standardize_response, to_token_map
from climrt.params import he_normal, zeros
from climrt.tensor import Tensor, as_tensor, concat, index
from climrt.tracker.backbone import BackboneConfig, BackboneParams, backbone_forward, backbone_shapes, init_backbone
from climrt.tracker.geometry import Grid
from climrt.tracker.heads import HeadOutputs, HeadParams, heads_forward, init_heads

# Table-2 row names, in table order.
VARIANTS = ("Baseline", "LCT", "GSTC+LCT", "MS fusion+LCT", "ClimNet+LCT")


@dataclass
class TrackerConfig:
    template_size: int = 127
    search_size: int = 287
    context: float = 0.5
    m: int = 1
    lambdas: tuple[float, float, float] = (1.0, 1.0, 3.0)
    backbone_widths: tuple[int, ...] = (32, 64, 96, 128, 128)
    climnet_widths: tuple[int, ...] = (16, 32, 64, 128)
    gating: bool = True
    token_dim: int = 128
    heads: int = 4
    ffn_mult: int = 4
    head_width: int = 64
    modulation_source: str = "m5"
    variant: str = "ClimNet+LCT"
    window_influence: float = 0.0
    size_lr: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.m < 1:
            raise ValueError("interval m must be >= 1")

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(widths=tuple(self.backbone_widths))

    @property
    def uses_climnet(self) -> bool:
        return self.variant not in ("Baseline", "LCT")

    @property
    def uses_lct(self) -> bool:
        return self.variant != "Baseline"

    def climnet_config(self) -> ClimNetConfig:
        return ClimNetConfig(
            widths=tuple(self.climnet_widths),
            gating=self.gating,
            encoder_block="plain" if self.variant == "MS fusion+LCT" else "gstc",
            decoder_block="plain" if self.variant == "GSTC+LCT" else "ms",
        )

    def lct_config(self) -> LctConfig:
        return LctConfig(self.token_dim, self.heads, self.ffn_mult, self.modulation_source)

    def grid(self) -> Grid:
        feat_z = backbone_shapes(self.template_size, self.backbone)[-1]
        feat_x = backbone_shapes(self.search_size, self.backbone)[-1]
        n = feat_x - feat_z + 1
        if n < 1:
            raise ValueError("template features larger than search features")
        return Grid(n, n, float(self.backbone.total_stride), self.search_size)


@dataclass
class ClimRTParams:
    backbone: BackboneParams
    heads: HeadParams
    climnet: ClimNetParams | None = None
    lct: LctParams | None = None
    proj: Tensor | None = None  # Baseline: 1x1 projection of the stage-5 response
    proj_bias: Tensor | None = None
    config: TrackerConfig = field(default_factory=TrackerConfig, metadata={"param": False})


def init_climrt(config: TrackerConfig | None = None, seed: int = 0) -> ClimRTParams:
    cfg = config or TrackerConfig()
    bb = init_backbone(cfg.backbone, seed)
    c4, c5 = cfg.backbone_widths[3], cfg.backbone_widths[4]
    params = ClimRTParams(bb, init_heads(cfg.token_dim, cfg.head_width, seed + 3), config=cfg)
    if cfg.uses_climnet:
        params.climnet = init_climnet(cfg.climnet_config(), seed + 1)
    if cfg.uses_lct:
        params.lct = init_lct(c4, c5, cfg.lct_config(), seed + 2)
    else:
        rng = np.random.default_rng(seed + 2)
        params.proj = he_normal(rng, (cfg.token_dim, c5), c5, gain=1.0)
        params.proj_bias = zeros((cfg.token_dim,))
    return params


def _split(t: Tensor, n: int) -> tuple[Tensor, Tensor]:
    return index(t, slice(0, n)), index(t, slice(n, 2 * n))


def template_features(template, params: ClimRTParams) -> tuple[Tensor, Tensor]:
    return backbone_forward(template, params.backbone, params.config.template_size)


def latent_frame(prev_search, search, params: ClimRTParams) -> Tensor:
    """Latent frame between the previous and current search crops (or the search crop itself)."""
    if params.climnet is None:
        return as_tensor(search)
    return climnet_forward(prev_search, search, params.climnet)


def climrt_forward(z_feats, search, prev_search, params: ClimRTParams, return_latent: bool = False, latent=None):
    """Heads for channel-first search crops; ``z_feats`` are the template's stage-4/5 features.

    Inputs may carry a leading batch axis. With ``return_latent`` the latent frame
    (or ``None`` for the Baseline variant) is returned alongside the heads. A given
    ``latent`` is used instead of running the latent-frame network.
    """
    cfg = params.config
    x = as_tensor(search)
    batched = x.ndim == 4
    z4, z5 = z_feats
    if params.lct is None:
        _, x5 = backbone_forward(x, params.backbone, cfg.search_size)
        m_st = to_token_map(standardize_response(cross_correlate(z5, x5)), params.proj, params.proj_bias)
        heads = heads_forward(m_st, params.heads)
        return (heads, None) if return_latent else heads
    latent = latent_frame(prev_search, x, params) if latent is None else as_tensor(latent)
    both = concat([x, latent], axis=0) if batched else concat([x[None], latent[None]], axis=0)
    f4, f5 = backbone_forward(both, params.backbone, cfg.search_size)
    n = x.shape[0] if batched else 1
    x4, l4 = _split(f4, n)
    x5, l5 = _split(f5, n)
    if not batched:
        x4, x5, l5 = x4[0], x5[0], l5[0]
    m_s4 = cross_correlate(z4, x4)
    m_s5 = cross_correlate(z5, x5)
    m_t5 = cross_correlate(z5, l5)
    heads = heads_forward(lct_forward(m_s4, m_s5, m_t5, params.lct), params.heads)
    return (heads, latent) if return_latent else heads
