"""Single-file ``.gtsa`` checkpoint archive.

Layout::

    GTSA-CKPT <version> <manifest-bytes>\\n
    <manifest text, utf-8>
    <raw little-endian float32 array data>

The manifest holds a ``[config]`` section (TrainConfig as ``key = value``), a
``[state]`` section (step, epoch, momentum) and an ``[arrays]`` directory with
one ``name dtype shape offset nbytes`` line per array; offsets are relative to
the start of the data block.
"""

from __future__ import annotations

import os
from typing import Dict, Tuple

import numpy as np
import torch

from gtsa.config import TrainConfig

MAGIC = "GTSA-CKPT"
VERSION = 1
DTYPE = "<f4"


class CheckpointError(ValueError):
    pass


def _state_arrays(state) -> Dict[str, torch.Tensor]:
    arrays = {}
    for n, p in state.student.named_parameters():
        arrays[f"student.{n}"] = p
    for n, p in state.teacher.named_parameters():
        arrays[f"teacher.{n}"] = p
    for n, t in state.exp_avg.items():
        arrays[f"adam_m.{n}"] = t
    for n, t in state.exp_avg_sq.items():
        arrays[f"adam_v.{n}"] = t
    return arrays


def save_checkpoint(state, cfg: TrainConfig, path) -> None:
    arrays = _state_arrays(state)
    lines = ["[config]", cfg.to_text().rstrip("\n"), "[state]",
             f"step = {state.step}", f"epoch = {state.epoch}",
             f"momentum = {float(state.momentum)!r}", "[arrays]"]
    blobs = []
    offset = 0
    for name, t in arrays.items():
        data = t.detach().cpu().numpy().astype(DTYPE).tobytes()
        shape = "x".join(str(d) for d in t.shape) or "scalar"
        lines.append(f"{name} float32 {shape} {offset} {len(data)}")
        blobs.append(data)
        offset += len(data)
    lines.append("[end]")
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    header = f"{MAGIC} {VERSION} {len(manifest)}\n".encode("ascii")
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(manifest)
            for b in blobs:
                fh.write(b)
        os.replace(tmp, path)
    except OSError as e:
        raise OSError(f"failed to write checkpoint {path}: {e}") from e


def _parse_manifest(text: str):
    sections: Dict[str, list] = {}
    current = None
    for line in text.splitlines():
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is not None and line.strip():
            sections[current].append(line)
    for req in ("config", "state", "arrays", "end"):
        if req not in sections:
            raise CheckpointError(f"manifest missing [{req}] section")
    return sections


def read_archive(path) -> Tuple[TrainConfig, Dict[str, str], Dict[str, np.ndarray]]:
    """Low-level reader: config, raw state fields and arrays by name."""
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: truncated header")
    parts = blob[:nl].decode("ascii", "replace").split()
    if len(parts) != 3 or parts[0] != MAGIC:
        raise CheckpointError(f"{path}: not a .gtsa checkpoint")
    if int(parts[1]) != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {parts[1]} (expected {VERSION})")
    mlen = int(parts[2])
    start = nl + 1
    if len(blob) < start + mlen:
        raise CheckpointError(f"{path}: truncated manifest")
    sections = _parse_manifest(blob[start:start + mlen].decode("utf-8"))
    cfg = TrainConfig.from_text("\n".join(sections["config"]))
    fields = dict((s.strip() for s in l.split("=", 1)) for l in sections["state"])
    data = blob[start + mlen:]
    arrays = {}
    end = 0
    for line in sections["arrays"]:
        name, dtype, shape, off, nbytes = line.split()
        off, nbytes = int(off), int(nbytes)
        if dtype != "float32":
            raise CheckpointError(f"{path}: unsupported dtype {dtype} for {name}")
        dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
        if off + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated data for array {name}")
        arr = np.frombuffer(data, dtype=DTYPE, count=nbytes // 4, offset=off)
        if arr.size != int(np.prod(dims)):
            raise CheckpointError(f"{path}: size mismatch for array {name}")
        arrays[name] = arr.reshape(dims)
        end = max(end, off + nbytes)
    if end != len(data):
        raise CheckpointError(f"{path}: {len(data) - end} trailing bytes after array data")
    return cfg, fields, arrays


def load_checkpoint(path):
    """Return ``(TrainState, TrainConfig)``; every array must match the config's model."""
    from gtsa.trainer import init_state

    cfg, fields, arrays = read_archive(path)
    state = init_state(cfg)
    expected = _state_arrays(state)
    unknown = sorted(set(arrays) - set(expected))
    if unknown:
        raise CheckpointError(f"{path}: unknown arrays {unknown[:5]}")
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise CheckpointError(f"{path}: missing arrays {missing[:5]}")
    with torch.no_grad():
        for name, t in expected.items():
            src = arrays[name]
            if tuple(src.shape) != tuple(t.shape):
                raise CheckpointError(f"{path}: shape mismatch for {name}")
            t.copy_(torch.from_numpy(src.astype(np.float32)))
    state.step = int(fields["step"])
    state.epoch = int(fields["epoch"])
    state.momentum = float(fields["momentum"])
    return state, cfg
