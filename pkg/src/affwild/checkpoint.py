"""Flat binary parameter archive with bit-exact round-trip.

Layout (all integers little-endian):

    magic   8 bytes   b"AFFWCKPT"
    version uint32    format version (currently 1)
    clen    uint32    length of the UTF-8 config block (0 if absent)
    config  clen bytes
    count   uint32    number of parameter records
    per record:
        nlen  uint16, name utf-8
        ndim  uint8, dims ndim x uint32
        data  prod(dims) x float64 little-endian

The config block carries an arbitrary structured-text payload (the model
modules store their configuration as JSON there).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"AFFWCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised on malformed or incompatible checkpoint files."""


def save_archive(path, params: dict[str, np.ndarray], config_text: str = "") -> None:
    """Write named float64 arrays (and an optional config block) to ``path``."""
    payload = config_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            # note: np.ascontiguousarray would promote 0-d arrays to 1-d
            arr = np.asarray(arr, dtype="<f8", order="C")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.tobytes())


def load_archive(path) -> tuple[dict[str, np.ndarray], str]:
    """Read back ``(params, config_text)``; values are bit-identical to what
    was saved."""
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a parameter archive")
    off = 8
    version, = struct.unpack_from("<I", blob, off)
    off += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    clen, = struct.unpack_from("<I", blob, off)
    off += 4
    config_text = blob[off:off + clen].decode("utf-8")
    off += clen
    count, = struct.unpack_from("<I", blob, off)
    off += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        nlen, = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        ndim, = struct.unpack_from("<B", blob, off)
        off += 1
        dims = struct.unpack_from(f"<{ndim}I", blob, off) if ndim else ()
        off += 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(dims)
        off += 8 * n
        params[name] = arr.astype(np.float64).copy()
    return params, config_text
