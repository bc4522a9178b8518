"""Registry of finite-difference checks for every differentiable op and block.

Each entry builds a scalar function and its float64 inputs at miniature shapes.
Composite blocks are checked with respect to their input and all their weights.
Networks with ReLU/max kinks use a small step so no perturbation crosses a kink.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from climrt import climnet as cn
from climrt import lct
from climrt import tensor as T
from climrt.params import map_tensors, parameters
from climrt.tensor.gradcheck import GradcheckResult, gradcheck
from climrt.tracker import heads as hd
from climrt.tracker.geometry import BBox, Grid
from climrt.tracker.losses import tracking_loss

TOL = 1e-4


@dataclass
class Case:
    fn: Callable
    inputs: list
    eps: float = 1e-3
    max_coords: int | None = 24
    directions: int = 2


def _weighted(out: T.Tensor, seed: int = 99) -> T.Tensor:
    """Random linear functional so no gradient cancels by symmetry."""
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return T.sum_(out * w)


def _away(rng, shape, margin=0.1):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def _tree_case(tree, builder, x_arrays, eps=1e-6, max_coords=12):
    """Check ``builder(tree, *xs)`` w.r.t. the inputs and every tensor in ``tree``."""
    leaves = [t.data.astype(np.float64) for t in parameters(tree)]
    nx = len(x_arrays)

    def fn(*ts):
        it = iter(ts[nx:])
        rebuilt = map_tensors(tree, lambda _: next(it))
        return _weighted(builder(rebuilt, *ts[:nx]))

    return Case(fn, list(x_arrays) + leaves, eps=eps, max_coords=max_coords, directions=3)


# ------------------------------------------------------------------ primitives


def _ops(rng) -> dict[str, Case]:
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    pos = rng.uniform(0.5, 2.0, (3, 4))
    far = a + np.where(rng.random((3, 4)) < 0.5, 0.5, -0.5) + 0 * b
    x5 = rng.standard_normal((2, 2, 3, 5, 5))
    return {
        "add": Case(lambda x, y: _weighted(x + y), [a, rng.standard_normal((4,))]),
        "sub": Case(lambda x, y: _weighted(x - y), [a, b]),
        "mul": Case(lambda x, y: _weighted(x * y), [a, rng.standard_normal((3, 1))]),
        "div": Case(lambda x, y: _weighted(x / y), [a, pos]),
        "scale": Case(lambda x: _weighted(T.scale(x, -2.5)), [a]),
        "maximum": Case(lambda x, y: _weighted(T.maximum(x, y)), [a, far]),
        "minimum": Case(lambda x, y: _weighted(T.minimum(x, y)), [a, far]),
        "exp": Case(lambda x: _weighted(T.exp(x)), [a]),
        "log": Case(lambda x: _weighted(T.log(x)), [pos]),
        "absolute": Case(lambda x: _weighted(T.absolute(x)), [_away(rng, (3, 4))]),
        "relu": Case(lambda x: _weighted(T.relu(x)), [_away(rng, (3, 4))]),
        "sigmoid": Case(lambda x: _weighted(T.sigmoid(x)), [a]),
        "bce_with_logits": Case(lambda x, t=rng.random((3, 4)): _weighted(T.bce_with_logits(x, t)), [a]),
        "sum": Case(lambda x: _weighted(T.sum_(x, axis=1, keepdims=True)), [a]),
        "mean": Case(lambda x: _weighted(T.mean(x, axis=0)), [a]),
        "reshape": Case(lambda x: _weighted(T.reshape(x, (2, 6))), [a]),
        "transpose": Case(lambda x: _weighted(T.transpose(x, (2, 0, 1))), [rng.standard_normal((2, 3, 4))]),
        "index": Case(lambda x: _weighted(T.index(x, (slice(1, 3), [0, 2, 2]))), [a]),
        "concat": Case(lambda x, y: _weighted(T.concat([x, y], axis=1)), [a, b]),
        "stack": Case(lambda x, y: _weighted(T.stack([x, y], axis=0)), [a, b]),
        "matmul": Case(lambda x, y: _weighted(T.matmul(x, y)), [rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))]),
        "softmax": Case(lambda x: _weighted(T.softmax(x, axis=-1)), [a]),
        "log_softmax": Case(lambda x: _weighted(T.log_softmax(x, axis=0)), [a]),
        "layer_norm": Case(lambda x, g, be: _weighted(T.layer_norm(x, g, be)), [a, rng.standard_normal(4), rng.standard_normal(4)]),
        "pool_avg": Case(lambda x: _weighted(T.pool_global(x, "avg")), [x5]),
        "pool_max": Case(lambda x: _weighted(T.pool_global(x, "max", "spatial")), [x5]),
        "conv3d": Case(
            lambda x, k, bias: _weighted(T.conv3d(x, k, bias, stride=(1, 2, 1), padding=1)),
            [x5, rng.standard_normal((3, 2, 3, 3, 3)), rng.standard_normal(3)],
        ),
        "conv_spatial": Case(
            lambda x, k: _weighted(T.conv_spatial(x, k, stride=(2, 2), padding=(1, 1))), [x5, rng.standard_normal((3, 2, 1, 3, 3))]
        ),
        "conv_temporal": Case(
            lambda x, k: _weighted(T.conv_temporal(x, k, padding_t=1)), [x5, rng.standard_normal((3, 2, 3, 1, 1))]
        ),
        "conv_transpose3d": Case(
            lambda x, k, bias: _weighted(T.conv_transpose3d(x, k, stride=(1, 2, 2), bias=bias)),
            [x5, rng.standard_normal((2, 3, 1, 2, 2)), rng.standard_normal(3)],
        ),
        "depthwise_conv3d": Case(
            lambda x, k: _weighted(T.depthwise_conv3d(x, k, padding=(0, 1, 1))), [x5, rng.standard_normal((2, 1, 3, 3))]
        ),
    }


# ------------------------------------------------------------------ blocks


def _blocks(rng) -> dict[str, Case]:
    mini = cn.init_climnet(cn.ClimNetConfig(widths=(4, 4, 4, 4)), seed=1)
    clip = rng.standard_normal((4, 2, 4, 4))
    ghost = cn._ghost(rng, 4, 5)
    gstc = mini.encoder[1]  # strided, with projection shortcut
    cases = {
        "ghost_spatial_conv": _tree_case(ghost, lambda p, x: cn.ghost_spatial_conv(x, p), [clip]),
        "stconv": _tree_case(cn._stconv(rng, 4, 4), lambda p, x: cn.stconv(x, p), [clip]),
        "gstc_block": _tree_case(gstc, lambda p, x: cn.gstc_block(x, p), [clip]),
        "feature_gate": _tree_case(mini.gates[0], lambda p, x: cn.feature_gate(x, p), [clip]),
        "ms_fusion": _tree_case(mini.decoder[0], lambda p, x: cn.ms_fusion(x, p), [rng.standard_normal((4, 2, 2, 2))]),
        "feature_transform": _tree_case(mini.transform, lambda p, x: cn.feature_transform(x, p), [rng.standard_normal((8, 2, 4, 4))]),
        "climnet": _tree_case(
            mini, lambda p, a, b: cn.climnet_forward(a, b, p), [rng.random((3, 8, 8)), rng.random((3, 8, 8))], max_coords=6
        ),
        "cross_correlate": Case(
            lambda z, x: _weighted(lct.cross_correlate(z, x)), [rng.standard_normal((3, 2, 2)), rng.standard_normal((3, 4, 5))]
        ),
    }
    c, p = 8, 6
    lp = lct.init_lct(3, 3, lct.LctConfig(token_dim=c, heads=2, ffn_mult=2), seed=2)
    m4, m5, mt = (rng.standard_normal((p, c)) for _ in range(3))
    cases["attention"] = _tree_case(lp.laeie.attn, lambda a, q, k: lct.multi_head_attention(q, k, k, a), [m4, m5])
    cases["laeie"] = _tree_case(lp.laeie, lambda a, x4, x5: lct.laeie_forward(x4, x5, a), [m4, m5])
    cases["calid"] = _tree_case(lp.calid, lambda a, t, e: lct.calid_forward(t, e, a), [mt, m5])
    cases["lct"] = _tree_case(
        lp,
        lambda a, r4, r5, rt: lct.lct_forward(r4, r5, rt, a).tokens,
        [rng.standard_normal((3, 2, 3)), rng.standard_normal((3, 2, 3)), rng.standard_normal((3, 2, 3))],
        max_coords=6,
    )
    hp = hd.init_heads(c, hidden=4, seed=3)
    grid = Grid(3, 3, 8.0, 32)
    targets = hd.assign_labels(BBox(16.0, 16.0, 14.0, 12.0), grid)

    def head_loss(params, tokens):
        out = hd.heads_forward(lct.SimilarityMap(tokens, 3, 3), params)
        return tracking_loss(out, targets).total

    cases["heads"] = _tree_case(hp, lambda a, t: T.concat([T.reshape(o, (-1,)) for o in _heads_tuple(a, t)]), [rng.standard_normal((9, c))])
    cases["tracking_loss"] = _tree_case(hp, head_loss, [rng.standard_normal((9, c))])
    cases["tracker"] = _tracker_case(rng)
    return cases


def _heads_tuple(params, tokens):
    out = hd.heads_forward(lct.SimilarityMap(tokens, 3, 3), params)
    return out.cls1, out.cls2, out.reg


def _tracker_case(rng) -> Case:
    """Joint miniature: backbone, latent network, LCT and heads under the tracking loss."""
    from climrt.tracker.model import TrackerConfig, climrt_forward, init_climrt, template_features

    cfg = TrackerConfig(
        template_size=16, search_size=24, backbone_widths=(3, 3, 3, 3, 3), climnet_widths=(2, 2, 2, 2),
        token_dim=4, heads=2, ffn_mult=1, head_width=2,
    )
    params = init_climrt(cfg, seed=4)
    grid = cfg.grid()
    targets = hd.assign_labels(BBox(12.0, 12.0, 16.0, 16.0), grid)
    z, x, prev = rng.random((3, 16, 16)), rng.random((3, 24, 24)), rng.random((3, 24, 24))

    def builder(p, zt, xt, pt):
        feats = template_features(zt, p)
        return tracking_loss(climrt_forward(feats, xt, pt, p), targets, cfg.lambdas).total

    case = _tree_case(params, builder, [z, x, prev], max_coords=3)
    case.directions = 4
    return case


def registry(seed: int = 0) -> dict[str, Callable[[], Case]]:
    """Name -> lazily built case; the same seed always yields the same inputs."""
    names_ops = list(_ops(np.random.default_rng(seed)))
    names_blocks = list(_blocks(np.random.default_rng(seed)))
    out = {}
    for name in names_ops:
        out[name] = lambda name=name: _ops(np.random.default_rng(seed))[name]
    for name in names_blocks:
        out[name] = lambda name=name: _blocks(np.random.default_rng(seed))[name]
    return out


def names() -> list[str]:
    return list(registry())


def run(scope: str = "all", seed: int = 0, tol: float = TOL) -> list[GradcheckResult]:
    """Run one named check or the whole suite (``scope="all"``)."""
    with T.precision(np.float64):
        reg = registry(seed)
        if scope != "all" and scope not in reg:
            raise KeyError(scope)
        selected = list(reg) if scope == "all" else [scope]
        results = []
        for name in selected:
            case = reg[name]()
            results.append(
                gradcheck(case.fn, case.inputs, eps=case.eps, tol=tol, max_coords=case.max_coords, directions=case.directions, seed=seed, name=name)
            )
    return results


if __name__ == "__main__":  # pragma: no cover
    start = time.perf_counter()
    for r in run():
        print(f"{r.name:<20}{r.max_rel_error:.2e} {'ok' if r.passed else 'FAIL'}")
    print(f"{time.perf_counter() - start:.1f}s")
