"""Checkpoint codec: JSON header followed by raw little-endian float64 blocks.

Layout::

    b"TTSC" | uint64 header length | header JSON (utf-8) | blocks...

The header holds the model config, each block's name/shape/offset (in float64
elements from the start of the block section) and the parameter checksum.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from app.models.toy_decoder import ModelConfig, ModelParams, ToyDecoder

MAGIC = b"TTSC"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised when a checkpoint is malformed or fails its checksum."""


def encode(config: ModelConfig, params: ModelParams, extra: Union[Dict[str, Any], None] = None) -> bytes:
    blocks = []
    payload = []
    offset = 0
    for name in params:
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        blocks.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload.append(arr.tobytes())
        offset += arr.size
    header = {
        "format": FORMAT_VERSION,
        "config": config.to_dict(),
        "blocks": blocks,
        "checksum": params.checksum(),
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + b"".join(payload)


def decode(blob: bytes) -> Tuple[ModelConfig, ModelParams, Dict[str, Any]]:
    if blob[:4] != MAGIC or len(blob) < 12:
        raise CheckpointError("not a steering checkpoint (bad magic)")
    (header_len,) = struct.unpack("<Q", blob[4:12])
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format')}")
    data = np.frombuffer(blob, dtype="<f8", offset=12 + header_len)
    arrays: Dict[str, np.ndarray] = {}
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(block["offset"])
        if start + count > data.size:
            raise CheckpointError(f"block {block['name']} runs past the end of the file")
        arrays[block["name"]] = data[start : start + count].reshape(shape).astype(np.float64)
    params = ModelParams(arrays)
    if params.checksum() != header["checksum"]:
        raise CheckpointError("checkpoint checksum mismatch")
    return ModelConfig.from_dict(header["config"]), params, header.get("extra", {})


def save_checkpoint(path: Path, model: ToyDecoder, extra: Union[Dict[str, Any], None] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(model.config, model.params, extra))


def load_checkpoint(path: Path, version: str = "local") -> ToyDecoder:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    config, params, _ = decode(path.read_bytes())
    return ToyDecoder(config, params, version=version)


__all__ = ["CheckpointError", "encode", "decode", "save_checkpoint", "load_checkpoint"]
