"""Binary model checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic  b"DSNCKPT\\x00"
    uint32    format version
    uint32    header length in bytes
    header    UTF-8 JSON: arch, arch_config, arch_hash, tensors [{name, shape}], meta
    payload   every tensor of the state dict, in header order, as float64 LE

The architecture hash covers the architecture name, its config and every
tensor name and shape; loaders refuse files whose hash differs from the
model they are loading into.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn as nn

MAGIC = b"DSNCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _tensor_specs(model: nn.Module) -> list[dict[str, Any]]:
    return [{"name": k, "shape": list(v.shape)} for k, v in model.state_dict().items()]


def architecture_hash(model: nn.Module) -> str:
    desc = {"arch": model.arch_name, "config": model.arch_config, "tensors": _tensor_specs(model)}
    return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).hexdigest()


def save_checkpoint(model: nn.Module, path: str | Path, meta: dict[str, Any] | None = None) -> None:
    header = {
        "arch": model.arch_name,
        "arch_config": model.arch_config,
        "arch_hash": architecture_hash(model),
        "tensors": _tensor_specs(model),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for t in model.state_dict().values():
            fh.write(t.detach().cpu().to(torch.float64).numpy().astype("<f8").tobytes())


def read_checkpoint(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if len(data) < 16:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[16 : 16 + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    offset = 16 + hlen
    counts = [int(np.prod(spec["shape"], dtype=np.int64)) for spec in header["tensors"]]
    if offset + 8 * sum(counts) != len(data):
        raise CheckpointError(f"{path}: payload size does not match header")
    arrays = {}
    for spec, count in zip(header["tensors"], counts):
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        arrays[spec["name"]] = arr.reshape(spec["shape"])
        offset += 8 * count
    return header, arrays


def load_into(model: nn.Module, path: str | Path) -> dict[str, Any]:
    """Load weights into ``model``; returns the header's ``meta`` dict."""
    header, arrays = read_checkpoint(path)
    expected = architecture_hash(model)
    if header["arch_hash"] != expected:
        raise CheckpointError(
            f"{path}: architecture hash {header['arch_hash'][:12]} does not match model {expected[:12]}"
        )
    current = model.state_dict()
    state = {k: torch.from_numpy(arrays[k].copy()).to(current[k].dtype) for k in current}
    model.load_state_dict(state)
    return header["meta"]


def load_model(path: str | Path) -> tuple[nn.Module, dict[str, Any]]:
    """Rebuild whichever model the checkpoint describes."""
    from .imitation import ImitationNet
    from .nets import DSN

    header, _ = read_checkpoint(path)
    builders = {DSN.arch_name: DSN, ImitationNet.arch_name: ImitationNet}
    if header["arch"] not in builders:
        raise CheckpointError(f"{path}: unknown architecture {header['arch']!r}")
    model = builders[header["arch"]](**header["arch_config"])
    meta = load_into(model, path)
    model.eval()
    return model, meta
