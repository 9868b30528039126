"""Synthetic embedding corpora with known ground truth.

Two ingredients make the evaluation suites possible without any real
videos:

* A two-class generator on the unit sphere whose classes concentrate
  around a query direction and its antipode, with equal sharpness. The
  class-conditional normalizers then cancel, so the true log density
  ratio is available in closed form: 2 * kappa * <query, x>. A scorer
  that ranks like the cosine therefore ranks like the true ratio.

* Planted corpora: per video, a contiguous evidence window of
  query-aligned frames dropped into an off-query background, with the
  matching annotation segments. Training examples and coverage
  evaluations both read off this construction.

Directional sampling uses the classic rejection scheme for the
von Mises-Fisher distribution (Wood, 1994): simulate the component
along the mean from a scaled Beta envelope, then attach a uniformly
random orthogonal direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .io import AnnotationRecord
from .numerics import Prng
from .training import TrainingExample, label_frames

__all__ = [
    "sample_unit_sphere",
    "sample_vmf",
    "TwoClassGenerator",
    "PlantedVideo",
    "make_training_set",
    "make_planted_corpus",
]


def sample_unit_sphere(rng: Prng, n: int, dim: int) -> np.ndarray:
    """n points uniform on the unit sphere in `dim` dimensions."""
    x = rng.normal(size=(n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _sample_vmf_cos(rng: Prng, kappa: float, dim: int) -> float:
    # Wood's envelope for the cosine w between sample and mean direction.
    b = (-2.0 * kappa + np.sqrt(4.0 * kappa**2 + (dim - 1) ** 2)) / (dim - 1)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (dim - 1) * np.log(1.0 - x0**2)
    while True:
        z = rng.beta((dim - 1) / 2.0, (dim - 1) / 2.0)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(0.0, 1.0)
        if kappa * w + (dim - 1) * np.log(1.0 - x0 * w) - c >= np.log(u):
            return float(w)


def sample_vmf(rng: Prng, mu, kappa: float, n: int) -> np.ndarray:
    """n unit vectors concentrated around mu with sharpness kappa.

    kappa = 0 degenerates to the uniform sphere distribution.
    """
    mu = np.asarray(mu, dtype=np.float64)
    dim = mu.shape[0]
    if dim < 2:
        raise ValueError("need dimension >= 2")
    norm = np.linalg.norm(mu)
    if norm == 0:
        raise ValueError("mean direction must be nonzero")
    mu = mu / norm
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    if kappa == 0:
        return sample_unit_sphere(rng, n, dim)
    out = np.empty((n, dim))
    for i in range(n):
        w = _sample_vmf_cos(rng, kappa, dim)
        g = rng.normal(size=dim)
        g -= (g @ mu) * mu
        g /= np.linalg.norm(g)
        out[i] = w * mu + np.sqrt(max(0.0, 1.0 - w * w)) * g
    return out


@dataclass
class TwoClassGenerator:
    """Positives concentrate around `query`, negatives around its antipode,
    both with the same kappa, so log p(x|+)/p(x|-) = 2 kappa <query, x>."""

    query: np.ndarray
    kappa: float

    def __post_init__(self):
        self.query = np.asarray(self.query, dtype=np.float64)
        self.query = self.query / np.linalg.norm(self.query)

    def sample(self, rng: Prng, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Half positives, half negatives, interleaved by a random shuffle."""
        n_pos = n // 2
        pos = sample_vmf(rng, self.query, self.kappa, n_pos)
        neg = sample_vmf(rng, -self.query, self.kappa, n - n_pos)
        X = np.concatenate([pos, neg])
        labels = np.concatenate(
            [np.ones(n_pos, dtype=bool), np.zeros(n - n_pos, dtype=bool)]
        )
        order = rng.permutation(n)
        return X[order], labels[order]

    def log_ratio(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return 2.0 * self.kappa * (X @ self.query)


@dataclass
class PlantedVideo:
    """One synthetic video: frame embeddings, its query, and the planted
    evidence segments (in seconds) that generated the positives."""

    frames: np.ndarray
    query: np.ndarray
    segments: list[tuple[float, float]] = field(default_factory=list)
    fps: float = 1.0
    video_id: str = ""
    query_id: str = ""

    def annotation(self) -> AnnotationRecord:
        return AnnotationRecord(
            query_id=self.query_id,
            video_id=self.video_id,
            fps=self.fps,
            n_frames=self.frames.shape[0],
            segments=list(self.segments),
        )

    def training_example(self) -> TrainingExample:
        mask = label_frames(self.segments, self.frames.shape[0], self.fps)
        return TrainingExample(self.frames, self.query, mask)


def _plant_one(
    rng: Prng,
    n_frames: int,
    dim: int,
    kappa: float,
    min_seg: int,
    max_seg: int,
    fps: float,
    index: int,
) -> PlantedVideo:
    query = sample_unit_sphere(rng, 1, dim)[0]
    length = int(rng.integers(min_seg, max_seg + 1))
    length = min(length, n_frames)
    start = int(rng.integers(0, n_frames - length + 1))
    frames = sample_vmf(rng, -query, kappa, n_frames)
    frames[start : start + length] = sample_vmf(rng, query, kappa, length)
    # Closed interval over frame timestamps index/fps.
    seg = (start / fps, (start + length - 1) / fps)
    return PlantedVideo(
        frames=frames,
        query=query,
        segments=[seg],
        fps=fps,
        video_id=f"video-{index:04d}",
        query_id=f"query-{index:04d}",
    )


def make_training_set(
    rng: Prng,
    n_videos: int,
    n_frames: int,
    dim: int,
    kappa: float = 10.0,
    min_seg: int = 4,
    max_seg: int = 12,
    fps: float = 1.0,
) -> list[TrainingExample]:
    """Planted videos flattened to labeled examples, one per video."""
    return [
        _plant_one(rng, n_frames, dim, kappa, min_seg, max_seg, fps, i)
        .training_example()
        for i in range(n_videos)
    ]


def make_planted_corpus(
    rng: Prng,
    n_videos: int,
    n_frames: int,
    dim: int,
    kappa: float = 10.0,
    min_seg: int = 8,
    max_seg: int = 16,
    fps: float = 1.0,
) -> list[PlantedVideo]:
    """Evaluation corpus; segment lengths are bounded so the evidence
    stays a small fraction of each timeline."""
    if max_seg > n_frames:
        raise ValueError("largest segment would exceed the video")
    return [
        _plant_one(rng, n_frames, dim, kappa, min_seg, max_seg, fps, i)
        for i in range(n_videos)
    ]
