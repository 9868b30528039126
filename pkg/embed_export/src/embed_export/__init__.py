"""Turns videos and query text into checksummed embedding files."""

from .encoders import (
    DEFAULT_ENCODER,
    ClipEncoder,
    EncoderUnavailableError,
    HashProjectionEncoder,
    UnknownEncoderError,
    get_encoder,
)
from .evsb import encode_embeddings, payload_checksum, write_embeddings
from .export import ExportJob, ExportResult, export
from .video import DecodeError, decode_frames, sample_plan

__all__ = [
    "DEFAULT_ENCODER",
    "ClipEncoder",
    "DecodeError",
    "EncoderUnavailableError",
    "ExportJob",
    "ExportResult",
    "HashProjectionEncoder",
    "UnknownEncoderError",
    "decode_frames",
    "encode_embeddings",
    "export",
    "get_encoder",
    "payload_checksum",
    "sample_plan",
    "write_embeddings",
]
