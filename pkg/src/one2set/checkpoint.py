"""Versioned binary checkpoint format.

Layout: 4-byte magic, 4-byte little-endian header length, UTF-8 JSON header
(format version, config echo, vocabulary hash, ordered parameter manifest
with shapes and dtypes), then the raw little-endian C-order bytes of every
parameter block in manifest order.  Loading rebuilds the model from the
config echo and validates every block's shape against it.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, SetTransformer

MAGIC = b"O2S\x01"
FORMAT_VERSION = 1

_DTYPES = {"f4": np.float32, "f8": np.float64}


def _dtype_tag(tensor: torch.Tensor) -> str:
    if tensor.dtype == torch.float32:
        return "f4"
    if tensor.dtype == torch.float64:
        return "f8"
    raise ValueError(f"unsupported parameter dtype {tensor.dtype}")


def save_checkpoint(model: SetTransformer, path: str | Path, vocab_hash: str,
                    extra: dict | None = None) -> None:
    state = model.state_dict()
    names = sorted(state)
    manifest = [
        {"name": n, "shape": list(state[n].shape), "dtype": _dtype_tag(state[n])}
        for n in names
    ]
    header = {
        "version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "vocab_hash": vocab_hash,
        "params": manifest,
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<I", len(blob)))
        handle.write(blob)
        for name in names:
            array = state[name].detach().cpu().numpy()
            handle.write(np.ascontiguousarray(array).astype(array.dtype, copy=False).tobytes())


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        (length,) = struct.unpack("<I", handle.read(4))
        return json.loads(handle.read(length).decode("utf-8"))


def load_checkpoint(path: str | Path, expected_vocab_hash: str | None = None):
    """Returns (model, header). Shape or hash mismatches are hard errors."""
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        (length,) = struct.unpack("<I", handle.read(4))
        header = json.loads(handle.read(length).decode("utf-8"))
        if header["version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        if expected_vocab_hash is not None and header["vocab_hash"] != expected_vocab_hash:
            raise ValueError("checkpoint vocabulary hash does not match")
        cfg = ModelConfig.from_dict(header["config"])
        model = SetTransformer(cfg)
        reference = model.state_dict()
        if sorted(reference) != [p["name"] for p in header["params"]]:
            raise ValueError("checkpoint parameter names do not match the config")
        state = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            expected = tuple(reference[entry["name"]].shape)
            if shape != expected:
                raise ValueError(
                    f"shape mismatch for {entry['name']}: file {shape}, config {expected}"
                )
            dtype = _DTYPES[entry["dtype"]]
            count = int(np.prod(shape)) if shape else 1
            raw = handle.read(count * dtype().itemsize)
            array = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
            state[entry["name"]] = torch.from_numpy(array)
    model.load_state_dict(state)
    return model, header
