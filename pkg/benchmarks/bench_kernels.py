"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Each row reports the best-of-N wall time for both backends on the same input,
checks the outputs agree, and prints the speedup. A full conv3d forward and
backward pass and one tracker step are timed as end-to-end references.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from climrt import _jit
from climrt.tensor import Tensor, conv3d, kernels, sum_


def best_of(fn, repeat: int) -> float:
    fn()  # warm-up (and JIT compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    xp = rng.standard_normal((4, 16, 4, 34, 34)).astype(np.float32)
    ks, st = (3, 3, 3), (1, 1, 1)
    out = tuple(kernels.out_extent(n, k, s, 0) for n, k, s in zip(xp.shape[2:], ks, st))
    cols = kernels.im2col(xp, ks, st, out)
    img = rng.random((128, 128, 3)).astype(np.float32)
    fill = img.mean(axis=(0, 1))
    u = np.linspace(-10, 140, 287, dtype=np.float64)
    x = Tensor(rng.standard_normal((4, 8, 2, 32, 32)).astype(np.float32), requires_grad=True)
    k = Tensor(rng.standard_normal((16, 8, 3, 3, 3)).astype(np.float32), requires_grad=True)

    def conv_pass():
        x.grad = k.grad = None
        sum_(conv3d(x, k, padding=1)).backward()
        return k.grad

    return {
        "im2col": lambda: kernels.im2col(xp, ks, st, out),
        "col2im": lambda: kernels.col2im(cols, xp.shape, ks, st, out),
        "bilinear_sample": lambda: kernels.bilinear_sample(img, fill, u, u),
        "conv3d fwd+bwd": conv_pass,
    }


def tracker_case():
    from climrt.synthbench.scene import generate_sequence, random_scene
    from climrt.tracker.model import TrackerConfig, init_climrt
    from climrt.tracker.track import ClimRTTracker

    cfg = TrackerConfig(template_size=32, search_size=64, backbone_widths=(16, 32, 48, 64, 64), climnet_widths=(8, 16, 32, 64), token_dim=32, head_width=32)
    params = init_climrt(cfg, seed=0)
    frames, ann = generate_sequence(random_scene(np.random.default_rng(0), length=3), seed=0)
    tracker = ClimRTTracker(params)

    def step():
        tracker.init(frames[0], ann.boxes[0])
        return tracker.update(frames[1])

    return step


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not _jit.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    table = cases(rng)
    table["tracker step"] = tracker_case()
    print(f"{'kernel':<18}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  agree")
    for name, fn in table.items():
        results, timing = {}, {}
        for backend in ("numpy", "numba"):
            prev = _jit.set_backend(backend)
            try:
                timing[backend] = best_of(fn, args.repeat)
                out = fn()
                results[backend] = np.asarray(out.xywh() if hasattr(out, "xywh") else out, dtype=np.float64).copy()
            finally:
                _jit.set_backend(prev)
        agree = np.allclose(results["numpy"], results["numba"], rtol=1e-4, atol=1e-4)
        np_ms, nb_ms = 1e3 * timing["numpy"], 1e3 * timing["numba"]
        print(f"{name:<18}{np_ms:>10.2f}{nb_ms:>10.2f}{np_ms / nb_ms:>8.2f}x  {'yes' if agree else 'NO'}")


if __name__ == "__main__":
    main()
