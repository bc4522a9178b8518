"""``clim``: command-line entry point.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from climrt import gradsuite
from climrt.climnet import climnet_forward, interframe_loss
from climrt.config import ConfigError, RunConfig, load_config, parse_pairs
from climrt.imageio import ImageFormatError, read_ppm, write_ppm
from climrt.params import load_state, load_weights, save_weights, state_dict
from climrt.synthbench.experiments import (
    MissingWeightsError,
    ablation_csv,
    ablation_text,
    run_ablation,
    sweep_csv,
    sweep_m,
    sweep_text,
)
from climrt.synthbench.ope import OracleTracker, StaticTracker, evaluate, run_ope
from climrt.synthbench.scene import generate_sequence, random_scene, square_triplets
from climrt.synthbench.seqio import find_sequences, load_annotation, load_sequence, read_trajectory, save_sequence, write_trajectory
from climrt.tensor import GeometryError, NonFiniteError, TensorError, no_grad
from climrt.tensor.io import FormatError
from climrt.tracker.model import VARIANTS, ClimRTParams, init_climrt
from climrt.tracker.track import ClimRTTracker, chw
from climrt.tracker.train import ToyDataset, TrainingDivergence, train_toy

log = logging.getLogger("climrt")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
CONFIG_FILE = "config.txt"


class UsageError(Exception):
    pass


def variant_dir(variant: str) -> str:
    """Directory name for a variant's weights, e.g. ``GSTC+LCT`` -> ``gstc_lct``."""
    return variant.lower().replace("+", "_").replace(" ", "_")


# ------------------------------------------------------------------ weights


def save_params(directory: Path, params: ClimRTParams, cfg: RunConfig) -> None:
    save_weights(directory, state_dict(params), extra=cfg.tracker_pairs())


def load_params(directory) -> ClimRTParams:
    directory = Path(directory)
    cfg_path = directory / CONFIG_FILE
    if not cfg_path.is_file():
        raise UsageError(f"{directory} is not a weights directory (no {CONFIG_FILE})")
    cfg = RunConfig.defaults().update(parse_pairs(cfg_path.read_text(), str(cfg_path)), str(cfg_path))
    params = init_climrt(cfg.tracker(), seed=0)
    try:
        return load_state(params, load_weights(directory))
    except KeyError as exc:
        raise UsageError(f"{directory}: {exc.args[0]}") from exc


def _sequences(root):
    return [load_sequence(p) for p in find_sequences(root)]


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _out_dir(args) -> Path:
    if args.out is None:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------------ commands


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    names = gradsuite.names()
    if args.scope != "all" and args.scope not in names:
        raise UsageError(f"unknown gradcheck scope {args.scope!r}; choose 'all' or one of: {', '.join(names)}")
    results = gradsuite.run(args.scope, seed=cfg.seed)
    lines = [f"{r.name:<20} max_rel_err={r.max_rel_error:.3e} coords={r.checked:<4d} {'PASS' if r.passed else 'FAIL'}" for r in results]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        _write(Path(args.out) / "gradcheck.txt", text)
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def cmd_interp(args, cfg: RunConfig) -> int:
    params = load_params(args.weights)
    if params.climnet is None:
        raise UsageError(f"variant {params.config.variant!r} has no latent-frame network")
    a, b = read_ppm(args.frame_a), read_ppm(args.frame_b)
    if a.shape != b.shape:
        raise UsageError(f"frame sizes differ: {a.shape[:2]} vs {b.shape[:2]}")
    with no_grad():
        latent = climnet_forward(chw(a), chw(b), params.climnet)
    img = np.transpose(latent.data, (1, 2, 0))
    if args.out is None:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(out, img)
    if args.truth:
        truth = read_ppm(args.truth)
        if truth.shape != a.shape:
            raise UsageError("ground-truth frame size differs from the inputs")
        print(f"interframe_loss={float(interframe_loss(latent, chw(truth)).data):.6f}")
    return EXIT_OK


def cmd_track(args, cfg: RunConfig) -> int:
    params = load_params(args.weights)
    if args.m is not None:
        from climrt.synthbench.experiments import with_m

        params = with_m(params, args.m)
    frames, ann = load_sequence(args.sequence)
    report, trajs = run_ope(lambda a: ClimRTTracker(params), [(frames, ann)])
    out = Path(args.out) if args.out else None
    if out is None:
        raise UsageError("--out is required")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trajectory(out, trajs[0])
    print(report.to_text(f"track {Path(args.sequence).name}", timing=True), end="")
    return EXIT_OK


def _factory(args):
    if args.tracker == "oracle":
        return OracleTracker
    if args.tracker == "static":
        return StaticTracker
    if not args.weights:
        raise UsageError("--tracker climrt needs --weights")
    params = load_params(args.weights)
    return lambda ann: ClimRTTracker(params)


def cmd_eval(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    paths = find_sequences(args.sequences)
    if args.results:
        anns = [load_annotation(p / "groundtruth.txt") for p in paths]
        trajs = []
        for p in paths:
            f = Path(args.results) / f"{p.name}.txt"
            if not f.is_file():
                raise UsageError(f"missing trajectory {f}")
            trajs.append(read_trajectory(f))
        report = evaluate(trajs, anns)
    else:
        seqs = [load_sequence(p) for p in paths]
        report, trajs = run_ope(_factory(args), seqs, jobs=args.jobs)
        for p, traj in zip(paths, trajs):
            (out / "trajectories").mkdir(exist_ok=True)
            write_trajectory(out / "trajectories" / f"{p.name}.txt", traj)
    _write(out / "report.txt", report.to_text("OPE report"))
    _write(out / "success.csv", report.success_csv())
    print(report.to_text("OPE report", timing=not args.results), end="")
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    for i in range(cfg["sequences"]):
        scene = random_scene(
            np.random.default_rng([cfg.seed, i]), cfg["length"], (cfg["frame_height"], cfg["frame_width"]), cfg["challenges"]
        )
        frames, ann = generate_sequence(scene, seed=cfg.seed * 1000 + i)
        save_sequence(out / f"seq_{i:03d}", frames, ann)
    print(f"wrote {cfg['sequences']} sequences of {cfg['length']} frames to {out}")
    return EXIT_OK


def cmd_sweep_m(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    params = load_params(args.weights)
    rows = sweep_m(params, _sequences(args.sequences), cfg["m_values"], jobs=args.jobs)
    _write(out / "sweep_m.txt", sweep_text(rows))
    _write(out / "sweep_m.csv", sweep_csv(rows))
    print(sweep_text(rows), end="")
    return EXIT_OK


def cmd_ablation(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    root = Path(args.weights)
    weights = {}
    for v in VARIANTS:
        d = root / variant_dir(v)
        if (d / CONFIG_FILE).is_file():
            weights[v] = load_params(d)
    rows = run_ablation(weights, _sequences(args.sequences), jobs=args.jobs)
    _write(out / "ablation.txt", ablation_text(rows))
    _write(out / "ablation.csv", ablation_csv(rows))
    print(ablation_text(rows), end="")
    return EXIT_OK


def _train_one(cfg: RunConfig, dataset: ToyDataset, out: Path) -> None:
    params = init_climrt(cfg.tracker(), seed=cfg.seed)
    result = train_toy(dataset, params, cfg.training(), progress=_progress)
    save_params(out, result.params, cfg)
    rows = ["phase,step,loss"] + [f"{ph},{i},{v:.6f}" for ph, hist in result.losses.items() for i, v in enumerate(hist)]
    _write(out / "losses.csv", "\n".join(rows) + "\n")
    _write(out / "run_config.txt", cfg.dump())


def _progress(phase, step, value):
    if step % 25 == 0:
        log.info("%s step %d loss %.4f", phase, step, value)


def cmd_train_toy(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    if args.sequences:
        seqs = _sequences(args.sequences)
    else:
        seqs = []
        for i in range(cfg["sequences"]):
            scene = random_scene(np.random.default_rng([cfg.seed, i]), cfg["length"], (cfg["frame_height"], cfg["frame_width"]), cfg["challenges"])
            seqs.append(generate_sequence(scene, seed=cfg.seed * 1000 + i))
    triplets = square_triplets(cfg["triplets"], cfg["triplet_size"], seed=cfg.seed) if "climnet" in cfg["phases"] else None
    dataset = ToyDataset(seqs, triplets)
    if args.variants == "all":
        for v in VARIANTS:
            _train_one(cfg.update({"variant": v}), dataset, out / variant_dir(v))
    else:
        _train_one(cfg, dataset, out)
    print(f"weights written to {out}")
    return EXIT_OK


COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "interp": cmd_interp,
    "track": cmd_track,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "sweep-m": cmd_sweep_m,
    "ablation": cmd_ablation,
    "train-toy": cmd_train_toy,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value run configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel sequences for evaluation")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="clim", description="Latent-frame tracking toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("scope", nargs="?", default="all", help="op name or 'all'")

    p = sub.add_parser("interp", parents=[common], help="synthesize a latent frame from two PPM frames")
    p.add_argument("--frame-a", required=True)
    p.add_argument("--frame-b", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--truth", help="ground-truth middle frame; prints the interframe loss")

    p = sub.add_parser("track", parents=[common], help="track one sequence, write its trajectory")
    p.add_argument("--sequence", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--m", type=int, help="override the frame interval")

    p = sub.add_parser("eval", parents=[common], help="one-pass evaluation report")
    p.add_argument("--sequences", required=True)
    p.add_argument("--tracker", choices=("climrt", "oracle", "static"), default="climrt")
    p.add_argument("--weights")
    p.add_argument("--results", help="directory of <sequence>.txt trajectories to score instead of tracking")

    sub.add_parser("synth", parents=[common], help="generate synthetic sequences")

    p = sub.add_parser("sweep-m", parents=[common], help="re-run evaluation for each frame interval m")
    p.add_argument("--sequences", required=True)
    p.add_argument("--weights", required=True)

    p = sub.add_parser("ablation", parents=[common], help="ablation table over the five variants")
    p.add_argument("--sequences", required=True)
    p.add_argument("--weights", required=True, help="directory holding one weights subdirectory per variant")

    p = sub.add_parser("train-toy", parents=[common], help="train on synthetic data")
    p.add_argument("--sequences", help="training sequences (default: generated from the seed)")
    p.add_argument("--steps", type=int, help="steps per phase (overrides config)")
    p.add_argument("--variants", choices=("one", "all"), default="one", help="'all' trains every ablation variant")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        overrides = list(args.set)
        if getattr(args, "steps", None) is not None:
            overrides.append(f"steps={args.steps}")
        cfg = load_config(args.config, overrides, seed=args.seed)
        return COMMANDS[args.command](args, cfg)
    except (TrainingDivergence, NonFiniteError) as exc:
        print(f"clim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, GeometryError, TensorError, ImageFormatError, FormatError, MissingWeightsError) as exc:
        print(f"clim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ValueError, OSError) as exc:
        print(f"clim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
