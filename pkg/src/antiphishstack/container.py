"""Versioned binary array container with a plain-text manifest.

``<stem>.bin`` holds the raw little-endian arrays back to back; ``<stem>.manifest``
lists name, dtype, shape and byte offset for each, plus free-form metadata.
Both files are byte-for-byte reproducible for identical inputs.
"""
from __future__ import annotations

import json
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from .errors import SchemaMismatch

CONTAINER_VERSION = "array-container/1"
_DTYPES = {"f8": "<f8", "f4": "<f4", "i8": "<i8"}


def save_arrays(stem: str | Path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, object] | None = None) -> None:
    stem = Path(stem)
    offset = 0
    lines = [f"# {CONTAINER_VERSION}", "meta\t" + json.dumps(dict(meta or {}), sort_keys=True)]
    with open(stem.with_suffix(".bin"), "wb") as fh:
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            code = "i8" if arr.dtype.kind in "iub" else ("f4" if arr.dtype == np.float32 else "f8")
            data = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
            shape = ",".join(str(s) for s in arr.shape)
            lines.append(f"array\t{name}\t{code}\t{shape}\t{offset}\t{len(data)}")
            fh.write(data)
            offset += len(data)
    stem.with_suffix(".manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_arrays(stem: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    stem = Path(stem)
    manifest = stem.with_suffix(".manifest")
    if not manifest.is_file():
        raise SchemaMismatch(f"missing manifest {manifest}")
    lines = manifest.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != f"# {CONTAINER_VERSION}":
        raise SchemaMismatch(f"{manifest}: unsupported container version")
    blob = stem.with_suffix(".bin").read_bytes()
    meta: dict = {}
    arrays: dict[str, np.ndarray] = {}
    for line in lines[1:]:
        kind, _, rest = line.partition("\t")
        if kind == "meta":
            meta = json.loads(rest)
            continue
        name, code, shape, offset, size = rest.split("\t")
        dims = tuple(int(s) for s in shape.split(",")) if shape else ()
        start = int(offset)
        chunk = blob[start:start + int(size)]
        if len(chunk) != int(size):
            raise SchemaMismatch(f"{stem}.bin truncated at array {name!r}")
        arrays[name] = np.frombuffer(chunk, dtype=_DTYPES[code]).reshape(dims).copy()
    return arrays, meta
