"""Bit-exact file formats for embeddings, annotations, and checkpoints.

These three formats are the contract between the scorer, the trainer,
and any external embedding exporter. All multi-byte fields are
little-endian regardless of platform.

Embedding file (extension ``.evsb``)::

    magic      4 bytes  b"EVSB"
    version    u32      1
    n          u32      number of rows (frames; 1 for a query)
    d          u32      embedding width
    payload    n*d*4    float32 values, row-major
    checksum   u64      sum of the payload bytes, modulo 2**64

Checkpoint file (extension ``.evck``)::

    magic        4 bytes  b"EVCK"
    version      u32      1
    dim          u32
    subspaces    u32
    window       u32
    lambda_init  f64      blend-weight starting point (config echo)
    tensor_count u32
    per tensor:
        name_len u16, name utf-8 bytes, ndim u8, dims u32 each,
        values f64, C order
    seed         u64      training seed

Annotation file: JSON Lines, one record per line, blank lines ignored::

    {"query_id": "...", "video_id": "...", "fps": 1.0,
     "n_frames": 120, "segments": [[start_sec, end_sec], ...]}

Embeddings are stored in 32-bit (matching upstream encoder precision);
checkpoints in 64-bit so a reloaded training state is bitwise identical.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import ParamTensor
from .scoring import TENSOR_NAMES, ScorerConfig, ScorerParams

__all__ = [
    "FileFormatError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedFileError",
    "ChecksumError",
    "MissingTensorError",
    "UnexpectedTensorError",
    "TensorShapeError",
    "ConfigMismatchError",
    "AnnotationError",
    "AnnotationRecord",
    "additive_checksum",
    "atomic_write_bytes",
    "atomic_write_text",
    "save_embeddings",
    "load_embeddings",
    "save_annotations",
    "load_annotations",
    "save_checkpoint",
    "load_checkpoint",
]

EMBEDDING_MAGIC = b"EVSB"
CHECKPOINT_MAGIC = b"EVCK"
FORMAT_VERSION = 1


class FileFormatError(Exception):
    """Base class for malformed or mismatched on-disk artifacts."""


class BadMagicError(FileFormatError):
    pass


class UnsupportedVersionError(FileFormatError):
    pass


class TruncatedFileError(FileFormatError):
    pass


class ChecksumError(FileFormatError):
    pass


class MissingTensorError(FileFormatError):
    pass


class UnexpectedTensorError(FileFormatError):
    pass


class TensorShapeError(FileFormatError):
    pass


class ConfigMismatchError(FileFormatError):
    pass


class AnnotationError(FileFormatError):
    """Raised with the offending record index for malformed annotations."""

    def __init__(self, record_index: int, message: str):
        super().__init__(f"annotation record {record_index}: {message}")
        self.record_index = record_index


def additive_checksum(data: bytes) -> int:
    """Sum of the byte values, modulo 2**64."""
    return sum(data) & 0xFFFFFFFFFFFFFFFF


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class _Reader:
    """Cursor over a byte buffer that raises TruncatedFileError on underrun."""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"{self.what}: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def done(self) -> bool:
        return self.pos == len(self.data)


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------


def save_embeddings(path, matrix) -> None:
    """Write an (n, d) matrix as a 32-bit embedding file, atomically."""
    m = np.ascontiguousarray(np.asarray(matrix, dtype=np.float32))
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ValueError(f"embeddings must be 2-d, got ndim={m.ndim}")
    n, d = m.shape
    payload = m.astype("<f4", copy=False).tobytes(order="C")
    blob = (
        EMBEDDING_MAGIC
        + struct.pack("<III", FORMAT_VERSION, n, d)
        + payload
        + struct.pack("<Q", additive_checksum(payload))
    )
    atomic_write_bytes(path, blob)


def load_embeddings(path) -> np.ndarray:
    """Load an embedding file to float64 (exact upcast from the stored f32)."""
    data = Path(path).read_bytes()
    r = _Reader(data, f"embedding file {path}")
    magic = r.take(4)
    if magic != EMBEDDING_MAGIC:
        raise BadMagicError(f"{path}: expected magic {EMBEDDING_MAGIC!r}, found {magic!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    n, d = r.u32(), r.u32()
    payload = r.take(4 * n * d)
    stored = r.u64()
    if not r.done():
        raise TruncatedFileError(f"{path}: {len(data) - r.pos} trailing bytes")
    actual = additive_checksum(payload)
    if actual != stored:
        raise ChecksumError(f"{path}: checksum {actual:#x} != stored {stored:#x}")
    values = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    return values.astype(np.float64)


# ---------------------------------------------------------------------------
# Annotations
# ---------------------------------------------------------------------------


@dataclass
class AnnotationRecord:
    """One (video, query) supervision record with its evidence segments."""

    query_id: str
    video_id: str
    fps: float
    n_frames: int
    segments: list[tuple[float, float]] = field(default_factory=list)


def _validate_record(idx: int, rec: AnnotationRecord) -> None:
    if rec.fps <= 0:
        raise AnnotationError(idx, f"fps must be positive, got {rec.fps}")
    if rec.n_frames < 0:
        raise AnnotationError(idx, f"n_frames must be non-negative, got {rec.n_frames}")
    for s, e in rec.segments:
        if s > e:
            raise AnnotationError(idx, f"segment [{s}, {e}] has start > end")
        if s < 0:
            raise AnnotationError(idx, f"segment [{s}, {e}] has negative start")


def save_annotations(path, records: Sequence[AnnotationRecord]) -> None:
    lines = []
    for rec in records:
        lines.append(
            json.dumps(
                {
                    "query_id": rec.query_id,
                    "video_id": rec.video_id,
                    "fps": rec.fps,
                    "n_frames": rec.n_frames,
                    "segments": [[s, e] for s, e in rec.segments],
                },
                sort_keys=True,
            )
        )
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def load_annotations(path) -> list[AnnotationRecord]:
    """Parse a JSON-lines annotation file, validating every record."""
    records: list[AnnotationRecord] = []
    text = Path(path).read_text(encoding="utf-8")
    idx = 0
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            rec = AnnotationRecord(
                query_id=str(obj["query_id"]),
                video_id=str(obj["video_id"]),
                fps=float(obj["fps"]),
                n_frames=int(obj["n_frames"]),
                segments=[(float(s), float(e)) for s, e in obj["segments"]],
            )
        except AnnotationError:
            raise
        except Exception as exc:
            raise AnnotationError(idx, f"malformed record: {exc}") from exc
        _validate_record(idx, rec)
        records.append(rec)
        idx += 1
    return records


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: ScorerParams, config: ScorerConfig, seed: int) -> None:
    """Serialize params + config + training seed, 64-bit, atomically."""
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack(
            "<IIIId",
            FORMAT_VERSION,
            config.dim,
            config.subspaces,
            config.window,
            config.lambda_init,
        ),
    ]
    tensors = params.tensors()
    parts.append(struct.pack("<I", len(tensors)))
    for name, tensor in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(tensor.value, dtype=np.float64)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            parts.append(struct.pack("<I", dim))
        parts.append(arr.astype("<f8", copy=False).tobytes(order="C"))
    parts.append(struct.pack("<Q", seed))
    atomic_write_bytes(path, b"".join(parts))


def _expected_shapes(config: ScorerConfig) -> dict[str, tuple[int, ...]]:
    d, dk, K = config.dim, config.head_dim, config.subspaces
    return {
        "attn_q": (d, d),
        "attn_k": (d, d),
        "attn_v": (d, d),
        "gate_wh": (d, d),
        "gate_wq": (d, d),
        "gate_b": (d,),
        "head_wv": (K, dk, d),
        "head_wq": (K, dk, d),
        "gamma_logit": (K,),
        "lambda_logit": (1,),
    }


def load_checkpoint(path, expected_config: ScorerConfig | None = None):
    """Load (params, config, seed) from a checkpoint file.

    If expected_config is given, any disagreement in dim / subspaces /
    window is a ConfigMismatchError: the caller's pipeline could not
    consume these tensors.
    """
    data = Path(path).read_bytes()
    r = _Reader(data, f"checkpoint {path}")
    magic = r.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: expected magic {CHECKPOINT_MAGIC!r}, found {magic!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    dim, subspaces, window = r.u32(), r.u32(), r.u32()
    lambda_init = r.f64()
    config = ScorerConfig(
        dim=dim, subspaces=subspaces, window=window, lambda_init=lambda_init
    )
    if expected_config is not None:
        for attr in ("dim", "subspaces", "window"):
            got, want = getattr(config, attr), getattr(expected_config, attr)
            if got != want:
                raise ConfigMismatchError(
                    f"{path}: checkpoint has {attr}={got}, caller expects {want}"
                )

    count = r.u32()
    raw_tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        ndim = r.u8()
        shape = tuple(r.u32() for _ in range(ndim))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        values = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape)
        if name in raw_tensors:
            raise UnexpectedTensorError(f"{path}: duplicate tensor '{name}'")
        raw_tensors[name] = values.astype(np.float64)
    seed = r.u64()
    if not r.done():
        raise TruncatedFileError(f"{path}: {len(data) - r.pos} trailing bytes")

    shapes = _expected_shapes(config)
    for name in TENSOR_NAMES:
        if name not in raw_tensors:
            raise MissingTensorError(f"{path}: tensor '{name}' not present")
        if raw_tensors[name].shape != shapes[name]:
            raise TensorShapeError(
                f"{path}: tensor '{name}' has shape {raw_tensors[name].shape}, "
                f"expected {shapes[name]}"
            )
    extra = set(raw_tensors) - set(TENSOR_NAMES)
    if extra:
        raise UnexpectedTensorError(f"{path}: unknown tensors {sorted(extra)}")

    params = ScorerParams(
        **{name: ParamTensor(raw_tensors[name].copy()) for name in TENSOR_NAMES}
    )
    return params, config, seed
