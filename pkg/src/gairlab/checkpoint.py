"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"GAIR"                 magic
    u32 version             FORMAT_VERSION
    u32 manifest_len
    manifest_len bytes      UTF-8 JSON, sorted keys, no whitespace
    payload                 float64 '<f8' arrays in manifest "tensors" order

The manifest carries layer specs, class count, tensor names and shapes,
optimizer hyperparameters, epoch and the training RNG state.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from gairlab.nn import Model, layer_from_spec
from gairlab.optim import OptimizerState

MAGIC = b"GAIR"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(model: Model, state: OptimizerState | None = None, epoch: int = 0, rng_state=None) -> bytes:
    names = model.param_names()
    arrays = list(model.params)
    if state is not None and state.buffers:
        names += [f"momentum.{n}" for n in model.param_names()]
        arrays += list(state.buffers)
    manifest = {
        "class_count": model.class_count,
        "layers": model.specs(),
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
        "epoch": epoch,
        "rng": rng_state,
        "optimizer": None
        if state is None
        else {"lr": state.lr, "momentum": state.momentum, "weight_decay": state.weight_decay},
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(head)) + head + payload


def decode(blob: bytes):
    """Return (model, optimizer state or None, manifest)."""
    if len(blob) < 12:
        raise CheckpointError(f"truncated checkpoint: {len(blob)} bytes")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, head_len = struct.unpack_from("<II", blob, 4)
    if version > FORMAT_VERSION:
        raise CheckpointError(f"checkpoint version {version} is newer than supported version {FORMAT_VERSION}")
    if version < 1:
        raise CheckpointError(f"invalid checkpoint version {version}")
    if len(blob) < 12 + head_len:
        raise CheckpointError("truncated checkpoint manifest")
    try:
        manifest = json.loads(blob[12 : 12 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from None
    model = Model([layer_from_spec(s) for s in manifest["layers"]], manifest["class_count"])
    offset = 12 + head_len
    arrays = {}
    for t in manifest["tensors"]:
        shape = tuple(t["shape"])
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(blob):
            raise CheckpointError(f"truncated payload at tensor {t['name']!r}")
        arrays[t["name"]] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes after payload")
    for name, p in zip(model.param_names(), model.params):
        if name not in arrays or arrays[name].shape != p.shape:
            raise CheckpointError(f"missing or mis-shaped tensor {name!r}")
        p[...] = arrays[name]
    state = None
    if manifest["optimizer"] is not None:
        opt = manifest["optimizer"]
        buffers = [arrays[f"momentum.{n}"].astype(np.float64) for n in model.param_names() if f"momentum.{n}" in arrays]
        state = OptimizerState(lr=opt["lr"], momentum=opt["momentum"], weight_decay=opt["weight_decay"], buffers=buffers)
    return model, state, manifest


def save_checkpoint(model: Model, state: OptimizerState | None, path, epoch: int = 0, rng_state=None) -> None:
    Path(path).write_bytes(encode(model, state, epoch, rng_state))


def load_checkpoint(path):
    return decode(Path(path).read_bytes())
