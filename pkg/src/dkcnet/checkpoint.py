"""Parameter checkpoint files.

A checkpoint is a NumPy ``.npz`` archive (uncompressed, float64 arrays
stored byte-for-byte, so the round trip is exact).  Reserved keys:

``__format__``
    int array ``[FORMAT_VERSION]``.
``__meta__``
    UTF-8 JSON bytes (uint8 array) with free-form metadata, e.g. the model
    config that produced the parameters.

Every other key maps a parameter name to its array.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

FORMAT_VERSION = 1
_RESERVED = ("__format__", "__meta__")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> Path:
    path = Path(path)
    bad = [k for k in arrays if k in _RESERVED]
    if bad:
        raise CheckpointError(f"reserved key(s) used as parameter names: {bad}")
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__format__"] = np.array([FORMAT_VERSION], dtype=np.int64)
    blob = json.dumps(dict(meta or {}), sort_keys=True).encode("utf-8")
    payload["__meta__"] = np.frombuffer(blob, dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    with np.load(Path(path), allow_pickle=False) as archive:
        if "__format__" not in archive.files:
            raise CheckpointError(f"{path}: not a checkpoint (missing __format__)")
        version = int(archive["__format__"][0])
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(archive["__meta__"].tobytes().decode("utf-8")) if "__meta__" in archive.files else {}
        arrays = {k: archive[k].copy() for k in archive.files if k not in _RESERVED}
    return arrays, meta
