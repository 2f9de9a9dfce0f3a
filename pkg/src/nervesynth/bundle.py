"""JSON manifest + concatenated little-endian float64 buffers.

Shared by adapter and model checkpoints: ``<stem>.json`` lists tensors in
order with their shapes, ``<stem>.bin`` holds the raw values back to back.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def write_bundle(stem: str | Path, manifest: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    with open(stem.with_suffix(".bin"), "wb") as fh:
        for name, arr in arrays:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            entries.append({"name": name, "shape": list(arr.shape)})
            fh.write(arr.tobytes())
    doc = dict(manifest)
    doc["tensors"] = entries
    stem.with_suffix(".json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_bundle(stem: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    stem = Path(stem)
    doc = json.loads(stem.with_suffix(".json").read_text())
    raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    arrays: dict[str, np.ndarray] = {}
    off = 0
    for entry in doc["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape))
        if off + n > raw.size:
            raise ValueError(f"{stem}.bin is truncated at tensor {entry['name']!r}")
        arrays[entry["name"]] = raw[off:off + n].reshape(shape).astype(np.float64)
        off += n
    if off != raw.size:
        raise ValueError(f"{stem}.bin has {raw.size - off} trailing values")
    return doc, arrays
