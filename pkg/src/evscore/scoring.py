"""Query-conditioned frame scoring network.

The pipeline scores every frame of a video against a text query, all in
embedding space:

    frames (n, d) --causal window attention--> contextual h   (n, d)
                  --query-guided sigmoid gate--> gated u      (n, d)
                  --K subspace cosine heads----> s            (n, K)
    score_i = lambda * cos(v_i, q) + (1 - lambda) * mean_k s_{i,k}

The attention is single-head scaled dot-product over a trailing window of
`window` frames (the current frame included), with a residual connection
and nothing else, so position tau depends only on frames in
[tau - window + 1, tau]. The blend weight lambda lives behind a sigmoid
and each head temperature gamma_k behind an exp, so lambda stays in (0,1)
and gamma_k stays positive under unconstrained updates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import (
    DegenerateInputWarning,
    ParamTensor,
    Prng,
    cosine,
    init_xavier,
    sigmoid,
)

__all__ = [
    "ScorerConfig",
    "ScorerParams",
    "ForwardCache",
    "NonFiniteError",
    "init_scorer",
    "aggregate",
    "gate",
    "subspace_scores",
    "evidence_score",
    "score_frames",
    "forward",
]

TENSOR_NAMES = (
    "attn_q",
    "attn_k",
    "attn_v",
    "gate_wh",
    "gate_wq",
    "gate_b",
    "head_wv",
    "head_wq",
    "gamma_logit",
    "lambda_logit",
)


class NonFiniteError(RuntimeError):
    """A pipeline stage produced a non-finite value."""

    def __init__(self, stage: str):
        super().__init__(f"non-finite values produced at stage '{stage}'")
        self.stage = stage


@dataclass(frozen=True)
class ScorerConfig:
    """Shape and initialization hyperparameters of the scorer."""

    dim: int = 768
    subspaces: int = 8
    window: int = 8
    lambda_init: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.subspaces < 1:
            raise ValueError("dim and subspaces must be at least 1")
        if self.dim % self.subspaces != 0:
            raise ValueError(
                f"subspaces ({self.subspaces}) must divide dim ({self.dim})"
            )
        if self.window < 1:
            raise ValueError("window must be at least 1")
        # lambda is parameterized through a sigmoid, so the endpoints are
        # unreachable; require an interior starting point.
        if not 0.0 < self.lambda_init < 1.0:
            raise ValueError("lambda_init must lie strictly inside (0, 1)")

    @property
    def head_dim(self) -> int:
        return self.dim // self.subspaces


@dataclass
class ScorerParams:
    """All learnable tensors of the scorer.

    head_wv / head_wq stack the K per-subspace projections as
    (K, head_dim, dim). gamma_logit and lambda_logit are unconstrained;
    the effective temperature is exp(gamma_logit) and the effective blend
    weight sigmoid(lambda_logit).
    """

    attn_q: ParamTensor
    attn_k: ParamTensor
    attn_v: ParamTensor
    gate_wh: ParamTensor
    gate_wq: ParamTensor
    gate_b: ParamTensor
    head_wv: ParamTensor
    head_wq: ParamTensor
    gamma_logit: ParamTensor
    lambda_logit: ParamTensor

    def tensors(self) -> dict[str, ParamTensor]:
        """Name -> tensor, in the fixed serialization/update order."""
        return {name: getattr(self, name) for name in TENSOR_NAMES}

    def zero_grad(self) -> None:
        for t in self.tensors().values():
            t.zero_grad()

    @property
    def gamma(self) -> np.ndarray:
        return np.exp(self.gamma_logit.value)

    @property
    def lambda_value(self) -> float:
        return float(sigmoid(self.lambda_logit.value)[0])


def init_scorer(config: ScorerConfig) -> ScorerParams:
    """Xavier-uniform matrices, zero gate bias, gamma = 1, lambda = lambda_init.

    Draw order is the fixed tensor order, so a seed pins every value.
    """
    d, dk, K = config.dim, config.head_dim, config.subspaces
    rng = Prng(config.seed)
    heads_v = np.stack([init_xavier(dk, d, rng) for _ in range(K)])
    heads_q = np.stack([init_xavier(dk, d, rng) for _ in range(K)])
    lam = config.lambda_init
    return ScorerParams(
        attn_q=ParamTensor(init_xavier(d, d, rng)),
        attn_k=ParamTensor(init_xavier(d, d, rng)),
        attn_v=ParamTensor(init_xavier(d, d, rng)),
        gate_wh=ParamTensor(init_xavier(d, d, rng)),
        gate_wq=ParamTensor(init_xavier(d, d, rng)),
        gate_b=ParamTensor(np.zeros(d)),
        head_wv=ParamTensor(heads_v),
        head_wq=ParamTensor(heads_q),
        gamma_logit=ParamTensor(np.zeros(K)),
        lambda_logit=ParamTensor(np.array([np.log(lam / (1.0 - lam))])),
    )


def _check_finite(arr: np.ndarray, stage: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(stage)


def _as_frames(frames) -> np.ndarray:
    v = np.asarray(frames, dtype=np.float64)
    if v.ndim == 1:
        v = v[None, :]
    if v.ndim != 2:
        raise ValueError(f"frames must be an (n, d) array, got ndim={v.ndim}")
    return v


def aggregate(frames, params: ScorerParams, window: int) -> np.ndarray:
    """Contextualize each frame over its trailing attention window.

    Returns h with h[tau] = v[tau] + sum_j alpha[tau,j] * (attn_v @ v[j]),
    the softmax running over j in [max(0, tau-window+1), tau] with scores
    (attn_q v_tau) . (attn_k v_j) / sqrt(d).
    """
    V = _as_frames(frames)
    if V.shape[0] == 0:
        raise ValueError("cannot aggregate an empty frame sequence")
    if window < 1:
        raise ValueError("window must be at least 1")
    H, _ = _attention(V, params, window)
    return H


def _attention(V: np.ndarray, params: ScorerParams, window: int):
    """Banded causal attention; returns (H, cache) with per-offset weights."""
    n, d = V.shape
    w = min(window, n)
    Ahat = V @ params.attn_q.value.T  # (n, d) attention queries
    Khat = V @ params.attn_k.value.T
    Vhat = V @ params.attn_v.value.T
    scale = 1.0 / np.sqrt(d)

    # E[tau, o] is the score against the frame o positions back.
    E = np.full((n, w), -np.inf)
    for o in range(w):
        E[o:, o] = np.einsum("nd,nd->n", Ahat[o:], Khat[: n - o]) * scale
    m = np.max(E, axis=1, keepdims=True)  # offset 0 is always in-window
    ex = np.exp(E - m)
    alpha = ex / np.sum(ex, axis=1, keepdims=True)

    attn = np.zeros_like(V)
    for o in range(w):
        attn[o:] += alpha[o:, o, None] * Vhat[: n - o]
    H = V + attn
    _check_finite(H, "aggregate")
    cache = {"Ahat": Ahat, "Khat": Khat, "Vhat": Vhat, "alpha": alpha, "w": w}
    return H, cache


def gate(h, q, params: ScorerParams) -> np.ndarray:
    """Channel-wise sigmoid gate conditioned on the query: u = h * g.

    Accepts a single vector (d,) or a stack (n, d).
    """
    h = np.asarray(h, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    z = h @ params.gate_wh.value.T + q @ params.gate_wq.value.T + params.gate_b.value
    g = sigmoid(z)
    return h * g


def _gate_cached(H: np.ndarray, q: np.ndarray, params: ScorerParams):
    Z = H @ params.gate_wh.value.T + q @ params.gate_wq.value.T + params.gate_b.value
    G = sigmoid(Z)
    U = H * G
    _check_finite(U, "gate")
    return U, G


def subspace_scores(u, q, params: ScorerParams) -> np.ndarray:
    """Per-subspace tempered cosine scores.

    s_k = cos(head_wv[k] @ u, head_wq[k] @ q) / gamma_k. Accepts (d,) and
    returns (K,), or (n, d) and returns (n, K). A zero-norm projection
    yields score 0 with a DegenerateInputWarning.
    """
    u = np.asarray(u, dtype=np.float64)
    single = u.ndim == 1
    s, _, _, _, _, degen = _subspace_cached(np.atleast_2d(u), np.asarray(q, dtype=np.float64), params)
    if degen.any():
        warnings.warn(
            "zero-norm subspace projection, score set to 0", DegenerateInputWarning
        )
    return s[0] if single else s


def _subspace_cached(U: np.ndarray, q: np.ndarray, params: ScorerParams):
    P = np.einsum("nd,kcd->nkc", U, params.head_wv.value)  # (n, K, dk)
    r = params.head_wq.value @ q  # (K, dk)
    p_norm = np.linalg.norm(P, axis=2)  # (n, K)
    r_norm = np.linalg.norm(r, axis=1)  # (K,)
    denom = p_norm * r_norm[None, :]
    degen = denom == 0.0
    safe = np.where(degen, 1.0, denom)
    cos = np.where(degen, 0.0, np.einsum("nkc,kc->nk", P, r) / safe)
    s = cos / params.gamma[None, :]
    _check_finite(s, "subspace")
    return s, P, r, p_norm, r_norm, degen


def _base_cosines(V: np.ndarray, q: np.ndarray):
    v_norm = np.linalg.norm(V, axis=1)
    q_norm = np.linalg.norm(q)
    denom = v_norm * q_norm
    degen = denom == 0.0
    safe = np.where(degen, 1.0, denom)
    base = np.where(degen, 0.0, (V @ q) / safe)
    return base, degen


def evidence_score(v, u, q, params: ScorerParams) -> float:
    """Blend of raw embedding similarity and the gated subspace scores."""
    lam = params.lambda_value
    s = subspace_scores(u, q, params)
    return lam * cosine(v, q) + (1.0 - lam) * float(np.mean(s))


@dataclass
class ForwardCache:
    """Intermediates of one scoring pass, kept for the backward pass."""

    V: np.ndarray
    q: np.ndarray
    window: int
    Ahat: np.ndarray
    Khat: np.ndarray
    Vhat: np.ndarray
    alpha: np.ndarray
    H: np.ndarray
    G: np.ndarray
    U: np.ndarray
    P: np.ndarray
    r: np.ndarray
    p_norm: np.ndarray
    r_norm: np.ndarray
    sub_degen: np.ndarray
    cos_sub: np.ndarray
    s: np.ndarray
    base: np.ndarray
    base_degen: np.ndarray
    lam: float
    mean_sub: np.ndarray
    scores: np.ndarray


def forward(frames, query, params: ScorerParams, config: ScorerConfig):
    """Full scoring pass; returns (scores, cache).

    Raises NonFiniteError naming the stage if an intermediate blows up.
    """
    if not isinstance(frames, np.ndarray):
        rows = list(frames)
        for i, row in enumerate(rows):
            if len(np.shape(row)) != 1 or np.shape(row)[0] != config.dim:
                raise ValueError(
                    f"frame {i} has dimension {np.shape(row)}, expected ({config.dim},)"
                )
        frames = np.asarray(rows, dtype=np.float64)
    V = _as_frames(frames)
    q = np.asarray(query, dtype=np.float64)
    n = V.shape[0]
    if n == 0:
        raise ValueError("cannot score an empty frame sequence")
    if q.shape != (config.dim,):
        raise ValueError(f"query has shape {q.shape}, expected ({config.dim},)")
    if V.shape[1] != config.dim:
        bad = int(np.argmax([row.shape[0] != config.dim for row in V]))
        raise ValueError(
            f"frame {bad} has dimension {V.shape[1]}, expected {config.dim}"
        )
    for i in range(n):
        if not np.all(np.isfinite(V[i])):
            raise ValueError(f"frame {i} contains non-finite values")

    H, att = _attention(V, params, config.window)
    U, G = _gate_cached(H, q, params)
    s, P, r, p_norm, r_norm, sub_degen = _subspace_cached(U, q, params)
    cos_sub = s * params.gamma[None, :]
    base, base_degen = _base_cosines(V, q)
    lam = params.lambda_value
    mean_sub = np.mean(s, axis=1)
    scores = lam * base + (1.0 - lam) * mean_sub
    _check_finite(scores, "blend")

    cache = ForwardCache(
        V=V, q=q, window=config.window,
        Ahat=att["Ahat"], Khat=att["Khat"], Vhat=att["Vhat"], alpha=att["alpha"],
        H=H, G=G, U=U, P=P, r=r, p_norm=p_norm, r_norm=r_norm,
        sub_degen=sub_degen, cos_sub=cos_sub, s=s,
        base=base, base_degen=base_degen, lam=lam, mean_sub=mean_sub,
        scores=scores,
    )
    return scores, cache


def score_frames(frames, query, params: ScorerParams, config: ScorerConfig) -> np.ndarray:
    """Score every frame of a sequence against the query. Deterministic."""
    scores, _ = forward(frames, query, params, config)
    return scores
