"""Writer for the binary embedding format consumed by the scoring stack.

Layout, all fields little-endian::

    magic      4 bytes  b"EVSB"
    version    u32      1
    n          u32      rows (frames; 1 for a query)
    d          u32      embedding width
    payload    n*d*4    float32 values, row-major
    checksum   u64      sum of the payload bytes, modulo 2**64

This module is deliberately self-contained: the format is the contract
with the consuming package, so the bytes are produced here from the
layout above rather than by importing the consumer's code.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"EVSB"
VERSION = 1


def payload_checksum(data: bytes) -> int:
    return sum(data) & 0xFFFFFFFFFFFFFFFF


def encode_embeddings(matrix) -> bytes:
    """Serialize an (n, d) array to the embedding format, returning bytes."""
    m = np.ascontiguousarray(np.asarray(matrix, dtype=np.float32))
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ValueError(f"embeddings must be 2-d, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("embeddings contain non-finite values")
    n, d = m.shape
    payload = m.astype("<f4", copy=False).tobytes(order="C")
    return (
        MAGIC
        + struct.pack("<III", VERSION, n, d)
        + payload
        + struct.pack("<Q", payload_checksum(payload))
    )


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename into place.

    Readers either see the complete file or no file at all."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_embeddings(path, matrix) -> None:
    atomic_write_bytes(path, encode_embeddings(matrix))
