"""Checkpoint files for named float64 tensors.

Format: one UTF-8 JSON header line ({"format", "version", "tensors": [{name,
shape}...]}) followed by the raw little-endian float64 bytes of each tensor
in header order.  Unlike zip-based containers the bytes carry no timestamps,
so identical parameters always produce identical files, and float64 values
round-trip bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_NAME = "actcast-tensors"
FORMAT_VERSION = 1


def save_params(path: str | Path, params: dict[str, np.ndarray]) -> None:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for v in params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != FORMAT_NAME:
            raise ValueError(f"{path}: not a {FORMAT_NAME} file")
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {header.get('version')}")
        out: dict[str, np.ndarray] = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated tensor {spec['name']!r}")
            out[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return out
