"""Checkpoint files: a flat float64 little-endian blob plus a text manifest.

The manifest sits next to the blob as ``<path>.manifest``::

    smac-checkpoint 1
    config {"stage_channels": [16, 32, ...], ...}
    rgb_encoder.stages.0.0.conv.weight 16x3x3x3 0
    ...

Each entry line is ``name shape byte_offset``. Trainable parameters come
first, then BN running statistics, both in traversal order.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import List, Tuple

import numpy as np

from smac.errors import DataError
from smac.network import NetworkConfig, TwoStreamState, named_buffers, named_parameters

MAGIC = "smac-checkpoint 1"
_DTYPE = np.dtype("<f8")


def _entries(state: TwoStreamState) -> List[Tuple[str, np.ndarray]]:
    out = [(n, p.data) for n, p in named_parameters(state)]
    out += named_buffers(state)
    return out


def _fmt_shape(shape) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _parse_shape(text: str) -> Tuple[int, ...]:
    if text == "scalar":
        return ()
    return tuple(int(d) for d in text.split("x"))


def config_to_json(cfg: NetworkConfig) -> str:
    return json.dumps(dataclasses.asdict(cfg), sort_keys=True)


def config_from_json(text: str) -> NetworkConfig:
    raw = json.loads(text)
    names = {f.name for f in dataclasses.fields(NetworkConfig)}
    unknown = set(raw) - names
    if unknown:
        raise DataError(f"checkpoint config has unknown keys {sorted(unknown)}")
    fixed = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    return NetworkConfig(**fixed)


def manifest_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".manifest")


def save_checkpoint(state: TwoStreamState, path) -> None:
    path = Path(path)
    lines = [MAGIC, "config " + config_to_json(state.config)]
    offset = 0
    with open(path, "wb") as fh:
        for name, arr in _entries(state):
            blob = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
            fh.write(blob)
            lines.append(f"{name} {_fmt_shape(arr.shape)} {offset}")
            offset += len(blob)
    manifest_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> TwoStreamState:
    path = Path(path)
    mpath = manifest_path(path)
    if not path.exists() or not mpath.exists():
        raise DataError(f"checkpoint {path} or its manifest is missing")
    lines = mpath.read_text(encoding="utf-8").splitlines()
    if len(lines) < 2 or lines[0] != MAGIC or not lines[1].startswith("config "):
        raise DataError(f"{mpath}: not a checkpoint manifest")
    cfg = config_from_json(lines[1][len("config "):])
    state = TwoStreamState.create(cfg)
    blob = path.read_bytes()
    targets = dict(_entries(state))
    seen = set()
    for lineno, line in enumerate(lines[2:], start=3):
        parts = line.split()
        if len(parts) != 3:
            raise DataError(f"{mpath}:{lineno}: expected 'name shape offset'")
        name, shape_text, off_text = parts
        if name not in targets:
            raise DataError(f"{mpath}:{lineno}: unknown tensor {name}")
        shape = _parse_shape(shape_text)
        target = targets[name]
        if shape != target.shape:
            raise DataError(f"{mpath}:{lineno}: {name} has shape {shape}, model expects {target.shape}")
        off = int(off_text)
        nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if off < 0 or off + nbytes > len(blob):
            raise DataError(f"{path}: {name} runs past the end of the file")
        values = np.frombuffer(blob, dtype=_DTYPE, count=nbytes // _DTYPE.itemsize, offset=off)
        np.copyto(target, values.reshape(shape))
        seen.add(name)
    missing = set(targets) - seen
    if missing:
        raise DataError(f"{mpath}: missing tensors {sorted(missing)[:3]}")
    return state
