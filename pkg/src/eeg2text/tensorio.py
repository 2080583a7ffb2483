"""Binary checkpoint container ("E2TP") for named parameter tensors.

Layout, little-endian:
    magic b"E2TP" | u32 version=1 | u32 header_len | header JSON (UTF-8)
    | concatenated float32 tensor payloads

The header carries an arbitrary config dict plus a tensor index of
{name, shape, offset} entries; offsets are float32-element offsets into
the payload. Tensors are stored sorted by name so identical parameter
sets always serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError

MAGIC = b"E2TP"
VERSION = 1


def save_tensors(path, config: dict, tensors: dict) -> Path:
    """Write named float arrays (Tensor or ndarray values) to `path`."""
    path = Path(path)
    index = []
    payloads = []
    offset = 0
    for name in sorted(tensors):
        t = tensors[name]
        arr = np.asarray(getattr(t, "data", t), dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes(order="C"))
        offset += arr.size
    header = json.dumps({"config": config, "tensors": index}, sort_keys=True).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", VERSION, len(header)))
            f.write(header)
            for p in payloads:
                f.write(p)
    except OSError as e:
        raise IoError(f"cannot write checkpoint {path}: {e}") from e
    return path


def load_tensors(path) -> tuple[dict, dict]:
    """Read a checkpoint; returns (config, {name: float64 ndarray})."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise IoError(f"cannot read checkpoint {path}: {e}") from e
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    payload = np.frombuffer(blob[12 + header_len :], dtype="<f4")
    tensors = {}
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        chunk = payload[entry["offset"] : entry["offset"] + size]
        if chunk.size != size:
            raise FormatError(f"{path}: truncated payload for tensor {entry['name']}")
        tensors[entry["name"]] = chunk.astype(np.float64).reshape(entry["shape"])
    return header["config"], tensors
