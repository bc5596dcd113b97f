"""Checkpoint format: JSON manifest header + raw little-endian arrays.

Layout:  magic line ``TOMLABCKPT 1``, one JSON line (entries: name, shape,
dtype, in file order; plus a free-form ``meta`` dict), then the arrays'
bytes concatenated in manifest order. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"TOMLABCKPT 1\n"


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name})
        blobs.append(np.ascontiguousarray(le).tobytes())
    header = json.dumps({"entries": entries, "meta": meta or {}}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not a tomlab checkpoint")
    nl = raw.index(b"\n", len(MAGIC))
    header = json.loads(raw[len(MAGIC):nl].decode("utf-8"))
    offset = nl + 1
    arrays = {}
    for entry in header["entries"]:
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = dtype.itemsize * count
        arr = np.frombuffer(raw[offset:offset + nbytes], dtype=dtype).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(np.dtype(entry["dtype"]), copy=True)
        offset += nbytes
    return arrays, header["meta"]
