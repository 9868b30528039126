"""Frame extraction at a fixed sampling rate.

Sampled frame i corresponds to timestamp i / fps, matching how the
downstream trainer converts frame indices to seconds. A video of
duration T yields floor(T * fps) frames (at least one), taken at
t = 0, 1/fps, 2/fps, ... in temporal order.
"""

from __future__ import annotations

import math
from pathlib import Path

import cv2
import numpy as np


class DecodeError(RuntimeError):
    pass


def sample_plan(n_src: int, src_fps: float, fps: float) -> list[int]:
    """Source frame index for each output timestamp.

    Indices are non-decreasing and may repeat when sampling faster than
    the source rate."""
    if n_src < 1 or src_fps <= 0:
        raise DecodeError(f"bad stream metadata: {n_src} frames at {src_fps} fps")
    duration = n_src / src_fps
    n_out = max(1, math.floor(duration * fps + 1e-9))
    return [
        min(n_src - 1, round(i / fps * src_fps)) for i in range(n_out)
    ]


def decode_frames(path, fps: float) -> list[np.ndarray]:
    """Sampled frames as RGB uint8 arrays, in temporal order."""
    path = Path(path)
    if not path.is_file():
        raise DecodeError(f"no such video: {path}")
    cap = cv2.VideoCapture(str(path))
    try:
        if not cap.isOpened():
            raise DecodeError(f"cannot open {path} as video")
        src_fps = cap.get(cv2.CAP_PROP_FPS)
        n_src = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        wanted = sample_plan(n_src, src_fps, fps)
        by_src: dict[int, np.ndarray] = {}
        needed = set(wanted)
        src_idx = 0
        while needed:
            ok, frame = cap.read()
            if not ok:
                raise DecodeError(
                    f"{path}: stream ended at frame {src_idx}, "
                    f"metadata promised {n_src}"
                )
            if src_idx in needed:
                by_src[src_idx] = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
                needed.discard(src_idx)
            src_idx += 1
        return [by_src[i] for i in wanted]
    finally:
        cap.release()
