"""Parameter checkpoints: little-endian float32 blob plus a JSON sidecar.

`save_checkpoint(path, ...)` writes `<path>` (raw floats) and `<path>.json`
(kind, tensor names/shapes/offsets, and arbitrary metadata such as seeds
and training configs).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError


def save_checkpoint(path, kind: str, tensors: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    entries = []
    offset = 0
    blobs = []
    for name, array in tensors.items():
        data = np.ascontiguousarray(array, dtype="<f4")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        offset += data.size
        blobs.append(data.tobytes())
    sidecar = {"schema": "ckpt/1", "kind": kind, "tensors": entries, "meta": meta}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(blobs))
    path.with_name(path.name + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray], dict]:
    path = Path(path)
    sidecar = json.loads(path.with_name(path.name + ".json").read_text())
    if sidecar.get("schema") != "ckpt/1":
        raise ConfigError(f"unknown checkpoint schema in {path}.json")
    flat = np.frombuffer(path.read_bytes(), dtype="<f4")
    tensors: dict[str, np.ndarray] = {}
    for entry in sidecar["tensors"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        chunk = flat[entry["offset"] : entry["offset"] + size]
        if chunk.size != size:
            raise ConfigError(f"checkpoint blob too short for tensor {entry['name']!r}")
        tensors[entry["name"]] = chunk.reshape(entry["shape"]).astype(np.float64)
    return sidecar["kind"], tensors, sidecar.get("meta", {})
