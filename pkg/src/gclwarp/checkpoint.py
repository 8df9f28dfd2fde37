"""Versioned binary checkpoint container with deterministic bytes.

Layout: magic ``GCKP``, uint32 format version, uint64 JSON header length,
the JSON header (sorted keys), then the raw little-endian tensor blobs.
The header embeds a config snapshot and an arbitrary JSON-able state tree
in which tensors are replaced by blob references, so two runs that produce
identical state produce identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

__all__ = ["save_checkpoint", "load_checkpoint", "CHECKPOINT_VERSION"]

MAGIC = b"GCKP"
CHECKPOINT_VERSION = 1

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.uint8: "|u1",
    torch.bool: "|b1",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


def _encode(node, tensors: list):
    if isinstance(node, torch.Tensor):
        tensors.append(node.detach().cpu().contiguous())
        return {"__tensor__": len(tensors) - 1}
    if isinstance(node, dict):
        if all(isinstance(k, str) for k in node):
            return {k: _encode(v, tensors) for k, v in node.items()}
        return {"__keyed__": [[k, _encode(v, tensors)] for k, v in node.items()]}
    if isinstance(node, (list, tuple)):
        enc = [_encode(v, tensors) for v in node]
        return {"__tuple__": enc} if isinstance(node, tuple) else enc
    if isinstance(node, (str, int, float, bool)) or node is None:
        return node
    if isinstance(node, np.integer):
        return int(node)
    if isinstance(node, np.floating):
        return float(node)
    raise TypeError(f"cannot serialise {type(node).__name__} into a checkpoint")


def _decode(node, tensors: list):
    if isinstance(node, dict):
        if "__tensor__" in node:
            return tensors[node["__tensor__"]]
        if "__keyed__" in node:
            return {k: _decode(v, tensors) for k, v in node["__keyed__"]}
        if "__tuple__" in node:
            return tuple(_decode(v, tensors) for v in node["__tuple__"])
        return {k: _decode(v, tensors) for k, v in node.items()}
    if isinstance(node, list):
        return [_decode(v, tensors) for v in node]
    return node


def save_checkpoint(path, header: dict, state: dict) -> None:
    """Write `state` (a tree that may contain tensors) plus a JSON header."""
    tensors: list[torch.Tensor] = []
    tree = _encode(state, tensors)
    specs = []
    offset = 0
    blobs = []
    for t in tensors:
        if t.dtype not in _DTYPES:
            raise TypeError(f"unsupported tensor dtype {t.dtype}")
        blob = t.numpy().tobytes()
        specs.append(
            {
                "dtype": _DTYPES[t.dtype],
                "shape": list(t.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    doc = {"header": header, "state": tree, "tensors": specs}
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read a checkpoint back; returns (header, state)."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        doc = json.loads(f.read(hlen).decode())
        blob = f.read()
    tensors = []
    for spec in doc["tensors"]:
        arr = np.frombuffer(
            blob, dtype=np.dtype(spec["dtype"]), count=int(np.prod(spec["shape"], initial=1)),
            offset=spec["offset"],
        )
        t = torch.from_numpy(arr.copy()).reshape(spec["shape"])
        tensors.append(t.to(_TORCH_DTYPES[spec["dtype"]]))
    return doc["header"], _decode(doc["state"], tensors)
