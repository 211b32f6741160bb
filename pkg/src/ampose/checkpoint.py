"""Binary checkpoint files.

Layout (all integers little-endian)::

    8 bytes   magic b"AMPOSECK"
    4 bytes   uint32 format version
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header (sorted keys, compact separators)
    ...       tensor payload, raw little-endian floats, concatenated

The header carries the model and training configs, progress counters, the
tensor directory (name, group, shape, dtype, offset, nbytes) and a SHA-256
of the payload. Tensors are stored as ``<f8`` by default so a reloaded run
resumes bit-exactly; ``<f4`` is available for compact exports and is
upcast to float64 on load.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"AMPOSECK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_GROUPS = ("param", "adam_m", "adam_v")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: dict[str, Any]
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_step: int = 0
    train_config: dict[str, Any] = field(default_factory=dict)
    progress: dict[str, int] = field(default_factory=dict)  # epoch, batch, step
    rng: dict[str, Any] = field(default_factory=dict)


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(ckpt: Checkpoint, dtype: str = "<f8") -> bytes:
    if dtype not in ("<f8", "<f4"):
        raise CheckpointError(f"unsupported storage dtype {dtype!r}")
    directory = []
    chunks = []
    offset = 0
    for group, tensors in zip(_GROUPS, (ckpt.params, ckpt.adam_m, ckpt.adam_v)):
        for name, arr in tensors.items():
            raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
            directory.append(
                {"name": name, "group": group, "shape": list(arr.shape), "dtype": dtype, "offset": offset, "nbytes": len(raw)}
            )
            chunks.append(raw)
            offset += len(raw)
    payload = b"".join(chunks)
    header = _dumps(
        {
            "format_version": FORMAT_VERSION,
            "model_config": ckpt.model_config,
            "train_config": ckpt.train_config,
            "adam_step": ckpt.adam_step,
            "progress": ckpt.progress,
            "rng": ckpt.rng,
            "tensors": directory,
            "payload_bytes": len(payload),
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
        }
    )
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + payload


def save_checkpoint(ckpt: Checkpoint, path: str | Path, dtype: str = "<f8") -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt, dtype))
    tmp.replace(path)


def parse_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < _PREFIX.size:
        raise CheckpointError("checkpoint truncated: shorter than the fixed prefix")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"format version mismatch: file has {version}, reader supports {FORMAT_VERSION}")
    start = _PREFIX.size + hlen
    if len(blob) < start:
        raise CheckpointError("checkpoint truncated inside the header")
    try:
        header = json.loads(blob[_PREFIX.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    payload = blob[start:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"checkpoint truncated: payload has {len(payload)} of {header['payload_bytes']} bytes")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError("payload digest mismatch: file is corrupt")
    groups: dict[str, dict[str, np.ndarray]] = {g: {} for g in _GROUPS}
    for entry in header["tensors"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=entry["dtype"]).astype(np.float64).reshape(entry["shape"])
        groups[entry["group"]][entry["name"]] = arr
    return Checkpoint(
        model_config=header["model_config"],
        params=groups["param"],
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
        adam_step=header["adam_step"],
        train_config=header["train_config"],
        progress=header["progress"],
        rng=header["rng"],
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return parse_checkpoint(path.read_bytes())
