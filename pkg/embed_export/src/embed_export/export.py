"""One export job: video + query text -> embedding files + annotation stub.

All encoding happens before any file is created, and each file lands via
an atomic rename, so a failed or interrupted job never leaves a partial
artifact. The stub is written last; its presence marks a finished job.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .encoders import DEFAULT_ENCODER, get_encoder
from .evsb import atomic_write_bytes, encode_embeddings
from .video import decode_frames


@dataclass(frozen=True)
class ExportJob:
    video: Path
    query: str
    out_dir: Path
    fps: float = 1.0
    encoder: str = DEFAULT_ENCODER
    video_id: str = ""  # default: video filename stem
    query_id: str = ""  # default: same as video_id

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "video", Path(self.video))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if not self.video_id:
            object.__setattr__(self, "video_id", self.video.stem)
        if not self.query_id:
            object.__setattr__(self, "query_id", self.video_id)


@dataclass(frozen=True)
class ExportResult:
    frames_path: Path
    query_path: Path
    stub_path: Path
    n_frames: int
    dim: int


def export(job: ExportJob) -> ExportResult:
    encoder = get_encoder(job.encoder)
    frames = decode_frames(job.video, job.fps)

    frame_emb = encoder.encode_frames(frames)
    query_emb = encoder.encode_text(job.query)
    n, d = frame_emb.shape
    if query_emb.shape != (d,):
        raise RuntimeError(
            f"encoder {encoder.name} returned mismatched widths: "
            f"frames {d}, query {query_emb.shape}"
        )

    # Serialize everything first; only then touch the output directory.
    frames_blob = encode_embeddings(frame_emb)
    query_blob = encode_embeddings(query_emb[None, :])
    stub = {
        "query_id": job.query_id,
        "video_id": job.video_id,
        "fps": job.fps,
        "n_frames": n,
        "segments": [],  # evidence spans are annotated downstream
    }
    stub_blob = (json.dumps(stub, sort_keys=True) + "\n").encode("utf-8")

    job.out_dir.mkdir(parents=True, exist_ok=True)
    frames_path = job.out_dir / f"{job.video_id}.frames.evsb"
    query_path = job.out_dir / f"{job.query_id}.query.evsb"
    stub_path = job.out_dir / f"{job.video_id}.stub.jsonl"
    atomic_write_bytes(frames_path, frames_blob)
    atomic_write_bytes(query_path, query_blob)
    atomic_write_bytes(stub_path, stub_blob)
    return ExportResult(frames_path, query_path, stub_path, n, d)
