"""Parameter trees (nested dataclasses of tensors) and the weights directory.

A weights directory holds one CLMT file per parameter plus ``manifest.txt``
with lines ``<name> <file> <d0>x<d1>x...``.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from climrt.tensor import Tensor
from climrt.tensor import io as tio

MANIFEST = "manifest.txt"


def param(array, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(array, dtype=dtype), requires_grad=True, dtype=dtype)


def he_normal(rng: np.random.Generator, shape, fan_in: int, gain: float = 2.0) -> Tensor:
    std = np.sqrt(gain / max(fan_in, 1))
    return param(rng.standard_normal(shape) * std)


def zeros(shape) -> Tensor:
    return param(np.zeros(shape))


def named_tensors(tree, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield ``(dotted_name, tensor)`` in declaration order."""
    if isinstance(tree, Tensor):
        yield prefix, tree
    elif dataclasses.is_dataclass(tree):
        for f in dataclasses.fields(tree):
            value = getattr(tree, f.name)
            if value is None or not f.metadata.get("param", True):
                continue
            yield from named_tensors(value, f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(tree, (list, tuple)):
        for i, value in enumerate(tree):
            if value is not None:
                yield from named_tensors(value, f"{prefix}.{i}" if prefix else str(i))
    elif isinstance(tree, dict):
        for key in sorted(tree):
            yield from named_tensors(tree[key], f"{prefix}.{key}" if prefix else str(key))


def parameters(tree) -> list[Tensor]:
    return [t for _, t in named_tensors(tree)]


def map_tensors(tree, fn: Callable[[Tensor], Tensor]):
    """Rebuild ``tree`` with every tensor replaced by ``fn(tensor)``."""
    if isinstance(tree, Tensor):
        return fn(tree)
    if dataclasses.is_dataclass(tree):
        changes = {}
        for f in dataclasses.fields(tree):
            value = getattr(tree, f.name)
            if value is not None and f.metadata.get("param", True):
                changes[f.name] = map_tensors(value, fn)
        return dataclasses.replace(tree, **changes)
    if isinstance(tree, list):
        return [map_tensors(v, fn) for v in tree]
    if isinstance(tree, tuple):
        return tuple(map_tensors(v, fn) for v in tree)
    if isinstance(tree, dict):
        return {k: map_tensors(v, fn) for k, v in tree.items()}
    return tree


def cast(tree, dtype):
    """Copy of ``tree`` whose tensors are trainable leaves of ``dtype``."""
    return map_tensors(tree, lambda t: Tensor(t.data.astype(dtype), requires_grad=True, dtype=dtype))


def zero_grads(tree) -> None:
    for t in parameters(tree):
        t.grad = None


def state_dict(tree) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in named_tensors(tree)}


def load_state(tree, state: dict[str, np.ndarray], strict: bool = True):
    """Return a copy of ``tree`` with values taken from ``state`` by name."""
    names = dict(named_tensors(tree))
    if strict:
        missing = sorted(set(names) - set(state))
        unexpected = sorted(set(state) - set(names))
        if missing or unexpected:
            raise KeyError(f"weights mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
    lookup = {id(t): name for name, t in names.items()}

    def replace(t: Tensor) -> Tensor:
        name = lookup[id(t)]
        if name not in state:
            return t
        value = np.asarray(state[name])
        if value.shape != t.shape:
            raise ValueError(f"{name}: stored shape {value.shape} != model shape {t.shape}")
        return param(value, dtype=t.dtype)

    return map_tensors(tree, replace)


def _file_name(name: str) -> str:
    return name.replace("/", "_") + ".clmt"


def save_weights(directory, state: dict[str, np.ndarray], extra: dict[str, str] | None = None) -> None:
    """Write ``state`` as CLMT files plus manifest; ``extra`` lines go to ``config.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in sorted(state):
        arr = np.asarray(state[name], dtype=np.float32)
        fname = _file_name(name)
        tio.save(directory / fname, arr)
        extent = "x".join(str(d) for d in arr.shape) or "scalar"
        lines.append(f"{name} {fname} {extent}")
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")
    if extra is not None:
        (directory / "config.txt").write_text("".join(f"{k}={v}\n" for k, v in sorted(extra.items())))


def load_weights(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {directory}")
    state = {}
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            name, fname, extent = line.split()
        except ValueError as exc:
            raise ValueError(f"{manifest}:{lineno}: malformed line") from exc
        arr = tio.load(directory / fname)
        shape = () if extent == "scalar" else tuple(int(d) for d in extent.split("x"))
        if arr.shape != shape:
            raise ValueError(f"{name}: manifest says {shape}, file holds {arr.shape}")
        state[name] = arr
    return state
