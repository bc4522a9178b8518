"""Run configuration: ``key=value`` files validated against a fixed schema.

Defaults describe the desk-scale toy model; see ``docs/config.md`` for the table.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from climrt.tracker.model import VARIANTS, TrackerConfig
from climrt.tracker.train import PHASES, TrainConfig


class ConfigError(ValueError):
    pass


def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    return float(v)


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(p) for p in v.split(",") if p.strip())


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(p) for p in v.split(",") if p.strip())


def _words(v: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in v.split(",") if p.strip())


def _choice(*options):
    def parse(v: str) -> str:
        v = v.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v

    return parse


def _phases(v: str) -> tuple[str, ...]:
    out = _words(v)
    bad = [p for p in out if p not in PHASES]
    if bad or not out:
        raise ValueError(f"phases must be drawn from {', '.join(PHASES)}")
    return out


# key -> (parser, default, help)
SCHEMA: dict[str, tuple] = {
    # tracker
    "template_size": (_int, 32, "template crop side in pixels"),
    "search_size": (_int, 64, "search crop side in pixels"),
    "context": (_float, 0.5, "context margin factor around the box"),
    "m": (_int, 1, "frame interval feeding the latent network"),
    "lambdas": (_floats, (1.0, 1.0, 3.0), "loss weights for cls1, cls2, loc"),
    "backbone_widths": (_ints, (16, 32, 48, 64, 64), "five backbone stage widths"),
    "climnet_widths": (_ints, (8, 16, 32, 64), "four latent-network stage widths"),
    "gating": (_bool, True, "channel gates after latent-network blocks"),
    "token_dim": (_int, 32, "transformer token width"),
    "heads": (_int, 4, "attention heads"),
    "ffn_mult": (_int, 4, "feed-forward expansion"),
    "head_width": (_int, 32, "hidden width of the prediction heads"),
    "modulation_source": (_choice("m5", "m4"), "m5", "map modulated by the encoder coefficient"),
    "variant": (_choice(*VARIANTS), "ClimNet+LCT", "ablation variant"),
    "window_influence": (_float, 0.0, "cosine window weight at decode time"),
    "size_lr": (_float, 1.0, "box size update rate"),
    # training
    "phases": (_phases, ("joint",), "training phases in order"),
    "steps": (_int, 300, "steps per phase"),
    "batch_size": (_int, 8, "samples per step"),
    "optimizer": (_choice("sgd", "adam"), "adam", "update rule"),
    "lr": (_float, 1e-3, "initial learning rate"),
    "lr_end": (_float, 1e-4, "final learning rate (log schedule)"),
    "momentum": (_float, 0.9, "SGD momentum"),
    "weight_decay": (_float, 1e-4, "L2 weight decay"),
    "fixed_batch": (_bool, False, "reuse one batch for every step"),
    "max_shift": (_float, 1.0, "search jitter in feature strides"),
    "template_frame": (_choice("first", "random"), "first", "template source frame"),
    "triplets": (_int, 200, "interpolation triplets for the climnet phase"),
    "triplet_size": (_int, 32, "triplet frame side"),
    # synthetic data
    "sequences": (_int, 4, "sequences generated by synth"),
    "length": (_int, 30, "frames per sequence"),
    "frame_height": (_int, 128, "frame height"),
    "frame_width": (_int, 128, "frame width"),
    "challenges": (_bool, True, "occluders and aspect changes"),
    # sweeps
    "m_values": (_ints, (1, 2, 3, 4, 5), "intervals swept by sweep-m"),
}

TRACKER_KEYS = (
    "template_size", "search_size", "context", "m", "lambdas", "backbone_widths", "climnet_widths",
    "gating", "token_dim", "heads", "ffn_mult", "head_width", "modulation_source", "variant",
    "window_influence", "size_lr",
)
TRAIN_KEYS = (
    "phases", "steps", "batch_size", "optimizer", "lr", "lr_end", "momentum", "weight_decay",
    "fixed_batch", "max_shift", "template_frame",
)


def _render(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


@dataclass
class RunConfig:
    values: dict
    seed: int = 0

    @classmethod
    def defaults(cls, seed: int = 0) -> "RunConfig":
        return cls({k: spec[1] for k, spec in SCHEMA.items()}, seed)

    def __getitem__(self, key: str):
        return self.values[key]

    def update(self, pairs: dict[str, str], origin: str = "override") -> "RunConfig":
        values = dict(self.values)
        for key, raw in pairs.items():
            if key not in SCHEMA:
                raise ConfigError(f"{origin}: unknown key {key!r}")
            try:
                values[key] = SCHEMA[key][0](raw)
            except ValueError as exc:
                raise ConfigError(f"{origin}: bad value for {key!r}: {exc}") from exc
        return RunConfig(values, self.seed)

    def tracker(self) -> TrackerConfig:
        kw = {k: self.values[k] for k in TRACKER_KEYS}
        if len(kw["lambdas"]) != 3:
            raise ConfigError("lambdas needs three values")
        if len(kw["backbone_widths"]) != 5 or len(kw["climnet_widths"]) != 4:
            raise ConfigError("backbone_widths needs 5 values and climnet_widths needs 4")
        try:
            cfg = TrackerConfig(**kw)
            cfg.grid()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    def training(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **{k: self.values[k] for k in TRAIN_KEYS})

    def tracker_pairs(self) -> dict[str, str]:
        """Tracker keys rendered back to text, for storing next to weights."""
        return {k: _render(self.values[k]) for k in TRACKER_KEYS}

    def dump(self) -> str:
        return "".join(f"{k}={_render(self.values[k])}\n" for k in SCHEMA) + f"# seed={self.seed}\n"


def parse_pairs(text: str, origin: str = "config") -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value
    return pairs


def load_config(path: str | Path | None = None, overrides: list[str] | None = None, seed: int = 0) -> RunConfig:
    cfg = RunConfig.defaults(seed)
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        cfg = cfg.update(parse_pairs(text, str(path)), str(path))
    if overrides:
        cfg = cfg.update(parse_pairs("\n".join(overrides), "--set"), "--set")
    return cfg
