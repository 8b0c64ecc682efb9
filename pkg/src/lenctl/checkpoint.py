"""Binary checkpoint files: magic "LENCTL1", JSON manifest, raw float64 payload.

Layout::

    b"LENCTL1" | uint64-LE manifest byte length | manifest JSON | payload

The manifest is a list of ``{"name", "shape", "offset"}`` entries with byte
offsets into the payload region; payloads are raw little-endian float64 in
row-major order.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .tensor import Tensor

MAGIC = b"LENCTL1"


def save_tensors(path: str | Path, tensors: dict[str, Tensor | np.ndarray]) -> None:
    manifest = []
    payloads = []
    offset = 0
    for name, t in tensors.items():
        # np.asarray with order="C" keeps 0-d arrays 0-d, which
        # ascontiguousarray would silently promote to shape (1,).
        arr = np.asarray(t.data if isinstance(t, Tensor) else t,
                         dtype="<f8", order="C")
        raw = arr.tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(raw)
        offset += len(raw)
    manifest_bytes = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(manifest_bytes)))
        f.write(manifest_bytes)
        for raw in payloads:
            f.write(raw)


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a LENCTL1 checkpoint")
    cursor = len(MAGIC)
    (manifest_len,) = struct.unpack_from("<Q", blob, cursor)
    cursor += 8
    try:
        manifest = json.loads(blob[cursor:cursor + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint manifest") from exc
    payload_start = cursor + manifest_len
    out: dict[str, np.ndarray] = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = payload_start + entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        out[entry["name"]] = arr.reshape(shape).astype(np.float64, copy=True)
    return out
