"""Versioned binary checkpoint container.

Byte layout (all integers little-endian)::

    offset 0   8 bytes   magic b"TSTKCKPT"
    offset 8   uint32    format version (currently 1)
    offset 12  uint64    header length H in bytes
    offset 20  H bytes   UTF-8 JSON header
    offset 20+H          tensor data region

The header holds the model config, normalization statistics, training state
and a ``tensors`` table; each entry gives ``name``, ``dtype`` (numpy dtype
string, little-endian), ``shape`` and ``offset``/``nbytes`` relative to the
start of the data region.  Arrays are stored C-contiguous.

Tensor name prefixes: none for model parameters and batch-norm buffers,
``optim.m/`` and ``optim.v/`` for Adam moments, ``best/`` for the best
parameters seen so far during a run.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import NormStats
from .model import ModelConfig, TSTModel

MAGIC = b"TSTKCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    norm: NormStats | None = None
    optimizer: dict | None = None  # {"t": int, "m": {name: array}, "v": {name: array}}
    rng: dict = field(default_factory=dict)
    epoch: int = 0
    train_state: dict = field(default_factory=dict)
    best_params: dict[str, np.ndarray] | None = None

    def build_model(self, best: bool = False) -> TSTModel:
        model = TSTModel(self.model_config)
        model.load_state_dict(self.best_params if best and self.best_params else self.params)
        return model


def _tensor_table(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    arrays = dict(ckpt.params)
    if ckpt.optimizer is not None:
        for key in ("m", "v"):
            for name, arr in ckpt.optimizer[key].items():
                arrays[f"optim.{key}/{name}"] = arr
    if ckpt.best_params is not None:
        for name, arr in ckpt.best_params.items():
            arrays[f"best/{name}"] = arr
    return arrays


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write ``ckpt`` atomically (temporary file in the same directory, then rename)."""
    path = Path(path)
    arrays = _tensor_table(ckpt)
    table, offset, blobs = [], 0, []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = arr.tobytes()
        table.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "model_config": ckpt.model_config.to_dict(),
        "norm": ckpt.norm.to_dict() if ckpt.norm is not None else None,
        "optimizer_step": None if ckpt.optimizer is None else int(ckpt.optimizer["t"]),
        "rng": ckpt.rng,
        "epoch": int(ckpt.epoch),
        "train_state": ckpt.train_state,
        "tensors": table,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_PREFIX.pack(MAGIC, VERSION, len(head)))
            fh.write(head)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, expect_config: ModelConfig | None = None, encoder_only: bool = False) -> Checkpoint:
    """Read a checkpoint; optionally reject one whose config differs from ``expect_config``.

    With ``encoder_only`` only the fields that determine encoder weight shapes
    are compared (head kind/size and dropout may differ).
    """
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    base = _PREFIX.size + hlen
    config = ModelConfig.from_dict(header["model_config"])
    if expect_config is not None:
        have = config.encoder_signature() if encoder_only else config.to_dict()
        want = expect_config.encoder_signature() if encoder_only else expect_config.to_dict()
        diff = {k: (have.get(k), want.get(k)) for k in set(have) | set(want) if have.get(k) != want.get(k)}
        if diff:
            detail = ", ".join(f"{k}: checkpoint={a!r} expected={b!r}" for k, (a, b) in sorted(diff.items()))
            raise CheckpointError(f"{path}: config mismatch ({detail})")

    params: dict[str, np.ndarray] = {}
    moments: dict[str, dict] = {"m": {}, "v": {}}
    best: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        arr = np.frombuffer(raw[start:start + entry["nbytes"]], dtype=np.dtype(entry["dtype"]))
        arr = arr.reshape(entry["shape"]).copy()
        name = entry["name"]
        if name.startswith("optim.m/"):
            moments["m"][name[len("optim.m/"):]] = arr
        elif name.startswith("optim.v/"):
            moments["v"][name[len("optim.v/"):]] = arr
        elif name.startswith("best/"):
            best[name[len("best/"):]] = arr
        else:
            params[name] = arr
    optimizer = None
    if header["optimizer_step"] is not None:
        optimizer = {"t": header["optimizer_step"], **moments}
    norm = NormStats.from_dict(header["norm"]) if header["norm"] else None
    return Checkpoint(config, params, norm, optimizer, header["rng"], header["epoch"],
                      header["train_state"], best or None)


def diff_checkpoints(a: Checkpoint, b: Checkpoint) -> dict[str, float]:
    """Max absolute difference per shared tensor name (0.0 means bitwise equal)."""
    out = {}
    for name in sorted(set(a.params) & set(b.params)):
        x, y = a.params[name], b.params[name]
        if x.shape != y.shape:
            out[name] = float("inf")
        elif np.array_equal(x, y):
            out[name] = 0.0
        else:
            out[name] = float(np.max(np.abs(x.astype(np.float64) - y.astype(np.float64))))
    return out
