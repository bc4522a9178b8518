"""Sequence directories and trajectory files.

A sequence directory holds ``frame_0000.ppm ...`` and ``groundtruth.txt`` with one
line per frame: ``x,y,w,h,occluded,aspect_change`` (top-left box form, 0/1 flags).
Trajectory files hold ``x,y,w,h`` lines.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from climrt.imageio import read_ppm, write_ppm
from climrt.synthbench.scene import SequenceAnnotation
from climrt.tracker.geometry import BBox

GROUNDTRUTH = "groundtruth.txt"


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def write_trajectory(path, boxes) -> None:
    lines = [",".join(_fmt(v) for v in (b.xywh() if isinstance(b, BBox) else b)) for b in boxes]
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path) -> list[BBox]:
    boxes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.replace("\t", ",").split(",")
        try:
            x, y, w, h = (float(v) for v in parts[:4])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: expected x,y,w,h") from exc
        boxes.append(BBox.from_xywh(x, y, w, h))
    return boxes


def save_sequence(directory, frames, annotation: SequenceAnnotation) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        write_ppm(directory / f"frame_{i:04d}.ppm", frame)
    lines = [
        ",".join([*(_fmt(v) for v in box.xywh()), str(int(occ)), str(int(arc))])
        for box, occ, arc in zip(annotation.boxes, annotation.occluded, annotation.aspect_change)
    ]
    (directory / GROUNDTRUTH).write_text("\n".join(lines) + "\n")
    return directory


def load_annotation(path) -> SequenceAnnotation:
    boxes, occ, arc = [], [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) not in (4, 6):
            raise ValueError(f"{path}:{lineno}: expected 4 or 6 comma-separated fields")
        x, y, w, h = (float(v) for v in parts[:4])
        boxes.append(BBox.from_xywh(x, y, w, h))
        occ.append(len(parts) == 6 and parts[4].strip() == "1")
        arc.append(len(parts) == 6 and parts[5].strip() == "1")
    return SequenceAnnotation(boxes, np.array(occ, dtype=bool), np.array(arc, dtype=bool))


def load_sequence(directory) -> tuple[list[np.ndarray], SequenceAnnotation]:
    directory = Path(directory)
    annotation = load_annotation(directory / GROUNDTRUTH)
    paths = sorted(directory.glob("frame_*.ppm"))
    if len(paths) != len(annotation):
        raise ValueError(f"{directory}: {len(paths)} frames but {len(annotation)} annotation lines")
    return [read_ppm(p) for p in paths], annotation


def find_sequences(root) -> list[Path]:
    """``root`` itself if it is a sequence directory, else its sequence subdirectories."""
    root = Path(root)
    if (root / GROUNDTRUTH).is_file():
        return [root]
    found = sorted(p for p in root.iterdir() if (p / GROUNDTRUTH).is_file()) if root.is_dir() else []
    if not found:
        raise FileNotFoundError(f"no sequences under {root}")
    return found
