"""Checkpoint IO: a text manifest plus one flat little-endian float32 blob.

Manifest line format: ``<name> f32 <dim0> <dim1> ...`` (no dims for scalars).
The blob holds the arrays back to back in manifest order.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.txt"
BLOB_NAME = "params.f32"


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = []
    chunks = []
    for name, arr in arrays.items():
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"checkpoint: invalid parameter name {name!r}")
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise TypeError(f"checkpoint: parameter {name!r} must be float32, got {arr.dtype}")
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"{name} f32 {dims}".rstrip())
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    (path / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    (path / BLOB_NAME).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    manifest = (path / MANIFEST_NAME).read_text().splitlines()
    blob = (path / BLOB_NAME).read_bytes()
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for lineno, line in enumerate(manifest, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        name, dtype = parts[0], parts[1]
        if dtype != "f32":
            raise ValueError(f"checkpoint: unsupported dtype {dtype!r} on manifest line {lineno}")
        if name in arrays:
            raise ValueError(f"checkpoint: duplicate parameter name {name!r}")
        shape = tuple(int(d) for d in parts[2:])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if offset + nbytes > len(blob):
            raise ValueError(f"checkpoint: blob too short for parameter {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        arrays[name] = arr.astype(np.float32, copy=True)
        offset += nbytes
    if offset != len(blob):
        raise ValueError(
            f"checkpoint: blob has {len(blob) - offset} trailing bytes beyond the manifest"
        )
    return arrays
