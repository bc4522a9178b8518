"""One-pass evaluation: run a tracker once per sequence, never re-initialised."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from climrt.synthbench.metrics import SUCCESS_THRESHOLDS, overlaps, precision_at, success_auc
from climrt.synthbench.scene import ATTRIBUTES, SequenceAnnotation
from climrt.tracker.geometry import BBox

log = logging.getLogger(__name__)


class Tracker(Protocol):
    def init(self, frame: np.ndarray, box: BBox) -> None: ...

    def update(self, frame: np.ndarray) -> BBox: ...


class OracleTracker:
    """Returns the ground truth; the analytic upper bound."""

    name = "oracle"

    def __init__(self, annotation: SequenceAnnotation):
        self.boxes = annotation.boxes
        self.t = 0

    def init(self, frame, box):
        self.t = 0

    def update(self, frame):
        self.t += 1
        return self.boxes[self.t]


class StaticTracker:
    """Never moves from the initial box."""

    name = "static"

    def __init__(self, annotation=None):
        self.box = None

    def init(self, frame, box):
        self.box = box

    def update(self, frame):
        return self.box


@dataclass
class SequenceResult:
    trajectory: list[BBox]
    failures: list[int]
    seconds: float


@dataclass
class MetricsReport:
    precision: float
    success_curve: np.ndarray
    auc: float
    attributes: dict[str, tuple[float, float, int]] = field(default_factory=dict)  # name -> (prec, auc, frames)
    fps: float = 0.0
    frames: int = 0
    sequences: int = 0
    failures: int = 0

    def to_text(self, title: str = "OPE report", timing: bool = False) -> str:
        rows = [f"# {title}", f"{'slice':<16}{'frames':>8}{'prec@20':>10}{'succ_auc':>10}"]
        rows.append(f"{'overall':<16}{self.frames:>8d}{self.precision:>10.4f}{self.auc:>10.4f}")
        for name, (prec, auc, n) in self.attributes.items():
            rows.append(f"{name:<16}{n:>8d}{prec:>10.4f}{auc:>10.4f}")
        rows.append(f"sequences={self.sequences} failures={self.failures}")
        if timing:
            rows.append(f"fps={self.fps:.2f}")
        return "\n".join(rows) + "\n"

    def success_csv(self) -> str:
        lines = ["threshold,success"] + [f"{t:.2f},{v:.6f}" for t, v in zip(SUCCESS_THRESHOLDS, self.success_curve)]
        return "\n".join(lines) + "\n"


def run_sequence(tracker: Tracker, frames, annotation: SequenceAnnotation) -> SequenceResult:
    """Track every frame after the first; a failing frame repeats the last estimate."""
    start = time.perf_counter()
    box = annotation.boxes[0]
    tracker.init(frames[0], box)
    trajectory, failures = [box], []
    for t in range(1, len(frames)):
        try:
            box = tracker.update(frames[t])
        except Exception as exc:  # noqa: BLE001 - failures are recorded, evaluation continues
            log.warning("tracker failed on frame %d: %s", t, exc)
            failures.append(t)
        trajectory.append(box)
    return SequenceResult(trajectory, failures, time.perf_counter() - start)


def evaluate(trajectories: list[list[BBox]], annotations: list[SequenceAnnotation], fps: float = 0.0, failures: int = 0) -> MetricsReport:
    """Average per-sequence precision/success; attribute slices pool flagged frames."""
    if len(trajectories) != len(annotations) or not annotations:
        raise ValueError("need one trajectory per annotated sequence")
    precs, curves = [], []
    for traj, ann in zip(trajectories, annotations):
        precs.append(precision_at(traj, ann.boxes))
        curves.append(success_auc(traj, ann.boxes)[0])
    curve = np.mean(curves, axis=0)
    attributes = {}
    for name in ATTRIBUTES:
        res = [b for traj, ann in zip(trajectories, annotations) for b, f in zip(traj, ann.attribute(name)) if f]
        gt = [b for ann in annotations for b, f in zip(ann.boxes, ann.attribute(name)) if f]
        if gt:
            attributes[name] = (precision_at(res, gt), success_auc(res, gt)[1], len(gt))
        else:
            attributes[name] = (0.0, 0.0, 0)
    frames = sum(len(a) for a in annotations)
    return MetricsReport(float(np.mean(precs)), curve, float(curve.mean()), attributes, fps, frames, len(annotations), failures)


def run_ope(
    tracker_factory: Callable[[SequenceAnnotation], Tracker],
    sequences: list[tuple[list[np.ndarray], SequenceAnnotation]],
    jobs: int = 1,
) -> tuple[MetricsReport, list[list[BBox]]]:
    """Evaluate a tracker over ``sequences``; results merge in sequence order."""

    def one(seq):
        frames, ann = seq
        return run_sequence(tracker_factory(ann), frames, ann)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, sequences))
    else:
        results = [one(s) for s in sequences]
    seconds = sum(r.seconds for r in results)
    tracked = sum(len(r.trajectory) - 1 for r in results)
    fps = tracked / seconds if seconds > 0 else 0.0
    trajectories = [r.trajectory for r in results]
    report = evaluate(trajectories, [ann for _, ann in sequences], fps, sum(len(r.failures) for r in results))
    return report, trajectories


def mean_iou(trajectory, annotation: SequenceAnnotation) -> float:
    return float(np.mean(overlaps(trajectory, annotation.boxes)))
