"""Frame and text encoders.

Two families:

* ``clip-vit-l`` (default): CLIP ViT-L/14 through transformers. Needs the
  pretrained weights in the local model cache; inference is pinned to the
  processor's default preprocessing (resize, center crop 224, CLIP channel
  statistics) so repeated runs embed identically.
* ``hashproj-<dim>``: weight-free deterministic encoder for tests and
  plumbing checks. Frames go through a fixed random projection of an
  8-bit thumbnail; text is hashed to a seed that generates a unit vector.
  No model quality is claimed, only determinism and the right shapes.
"""

from __future__ import annotations

import hashlib

import cv2
import numpy as np


class UnknownEncoderError(ValueError):
    pass


class EncoderUnavailableError(RuntimeError):
    """The encoder exists but cannot run here (missing weights/packages)."""


_THUMB = 16  # thumbnail side; 256 grayscale inputs to the projection


def _philox(seed_bytes: bytes) -> np.random.Generator:
    seed = int.from_bytes(hashlib.blake2b(seed_bytes, digest_size=8).digest(), "little")
    return np.random.Generator(np.random.Philox(seed))


class HashProjectionEncoder:
    def __init__(self, dim: int):
        if dim < 1:
            raise UnknownEncoderError(f"hashproj width must be positive, got {dim}")
        self.name = f"hashproj-{dim}"
        self.dim = dim
        rng = _philox(b"embed-export/hashproj/frame-projection")
        self._proj = rng.normal(size=(dim, _THUMB * _THUMB)) / np.sqrt(_THUMB * _THUMB)

    def encode_frames(self, frames) -> np.ndarray:
        out = np.empty((len(frames), self.dim), dtype=np.float32)
        for i, frame in enumerate(frames):
            gray = cv2.cvtColor(frame, cv2.COLOR_RGB2GRAY)
            thumb = cv2.resize(gray, (_THUMB, _THUMB), interpolation=cv2.INTER_AREA)
            v = self._proj @ (thumb.astype(np.float64).ravel() / 255.0)
            norm = np.linalg.norm(v)
            if norm == 0.0:  # an all-black frame projects to the origin
                v = np.zeros(self.dim)
                v[0] = 1.0
                norm = 1.0
            out[i] = (v / norm).astype(np.float32)
        return out

    def encode_text(self, text: str) -> np.ndarray:
        rng = _philox(b"embed-export/hashproj/text:" + text.encode("utf-8"))
        v = rng.normal(size=self.dim)
        v /= np.linalg.norm(v)
        return v.astype(np.float32)


class ClipEncoder:
    """CLIP ViT-L/14 image and text towers, eval mode, no gradients."""

    MODEL_REF = "openai/clip-vit-large-patch14"

    def __init__(self):
        self.name = "clip-vit-l"
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EncoderUnavailableError(
                "clip-vit-l needs torch and transformers installed; "
                "install the [clip] extra or use a hashproj-<dim> encoder"
            ) from exc
        try:
            # Offline by design: weights must already sit in the local
            # cache so batch jobs never race a download.
            self._model = CLIPModel.from_pretrained(self.MODEL_REF, local_files_only=True)
            self._processor = CLIPProcessor.from_pretrained(self.MODEL_REF, local_files_only=True)
        except Exception as exc:
            raise EncoderUnavailableError(
                f"clip-vit-l weights ({self.MODEL_REF}) not found in the local "
                "model cache; pre-download them on a connected machine or use "
                "a hashproj-<dim> encoder"
            ) from exc
        self._torch = torch
        self._model.eval()
        self.dim = int(self._model.config.projection_dim)

    def encode_frames(self, frames) -> np.ndarray:
        inputs = self._processor(images=list(frames), return_tensors="pt")
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)

    def encode_text(self, text: str) -> np.ndarray:
        inputs = self._processor(text=[text], return_tensors="pt", truncation=True)
        with self._torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)[0]


DEFAULT_ENCODER = "clip-vit-l"


def get_encoder(name: str):
    if name == "clip-vit-l":
        return ClipEncoder()
    if name.startswith("hashproj-"):
        suffix = name[len("hashproj-"):]
        if not suffix.isdigit():
            raise UnknownEncoderError(f"bad hashproj width in {name!r}")
        return HashProjectionEncoder(int(suffix))
    raise UnknownEncoderError(
        f"unknown encoder {name!r}; expected 'clip-vit-l' or 'hashproj-<dim>'"
    )
