"""Contrastive training of the frame scorer.

Frames inside an annotated evidence interval are positives, the rest of
the video negatives, and one sequence trains with a multi-positive
contrastive loss: log-sum-exp over all frame scores minus log-sum-exp
over the positive ones. The loss only sees score differences, so it is
invariant to shifting every score by a constant.

The backward pass is written out by hand against the exact forward in
``scoring`` (no autodiff anywhere), which is why the finite-difference
comparison in ``gradient_check`` exists: the two routes to the same
gradient are developed independently and must agree to 1e-4.

Embeddings come from a frozen encoder, so gradients flow into the
scorer's parameters only; frame and query inputs are never updated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .io import additive_checksum
from .numerics import Prng, finite_diff_grad, log_sum_exp
from .scoring import (
    TENSOR_NAMES,
    ForwardCache,
    NonFiniteError,
    ScorerConfig,
    ScorerParams,
    forward,
    init_scorer,
    score_frames,
)

__all__ = [
    "TrainingExample",
    "TrainConfig",
    "OptimizerState",
    "TrainReport",
    "label_frames",
    "infonce_loss",
    "backward",
    "adam_step",
    "train",
    "params_checksum",
    "density_ratio_probe",
    "GradCheckResult",
    "gradient_check",
]


@dataclass
class TrainingExample:
    """One (video, query) pair with per-frame positive labels."""

    frames: np.ndarray
    query: np.ndarray
    positive_mask: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.query = np.asarray(self.query, dtype=np.float64)
        self.positive_mask = np.asarray(self.positive_mask, dtype=bool)
        if self.positive_mask.shape != (self.frames.shape[0],):
            raise ValueError(
                f"mask has shape {self.positive_mask.shape}, "
                f"expected ({self.frames.shape[0]},)"
            )

    @property
    def usable(self) -> bool:
        """Trainable: needs at least one positive and one negative."""
        return bool(self.positive_mask.any() and (~self.positive_mask).any())


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 5
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive when set")


@dataclass
class OptimizerState:
    """First/second moment accumulators, one pair per parameter tensor."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: ScorerParams) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(t.value) for k, t in params.tensors().items()},
            v={k: np.zeros_like(t.value) for k, t in params.tensors().items()},
        )


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    skipped: int = 0
    params_checksum: int = 0


def label_frames(segments, n_frames: int, fps: float) -> np.ndarray:
    """Positive mask: frame i (timestamp i/fps) inside any closed segment.

    Boundary frames count as positive; the annotated interval is read as
    verified-sufficient, so inclusion is the safe direction.
    """
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    if n_frames < 0:
        raise ValueError(f"n_frames must be non-negative, got {n_frames}")
    mask = np.zeros(n_frames, dtype=bool)
    t = np.arange(n_frames) / fps
    for start, end in segments:
        if start < 0:
            raise ValueError(f"segment [{start}, {end}] has negative start")
        if start > end:
            raise ValueError(f"segment [{start}, {end}] has start > end")
        mask |= (t >= start) & (t <= end)
    return mask


def infonce_loss(scores, positive_mask) -> float:
    """lse(all scores) - lse(positive scores); zero when negatives vanish."""
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(positive_mask, dtype=bool)
    if scores.shape != mask.shape:
        raise ValueError("scores and mask must have matching shapes")
    if not mask.any():
        raise ValueError("loss needs at least one positive frame")
    if mask.all():
        raise ValueError("loss needs at least one negative frame")
    return log_sum_exp(scores) - log_sum_exp(scores[mask])


def _softmax(t: np.ndarray) -> np.ndarray:
    e = np.exp(t - np.max(t))
    return e / e.sum()


def _infonce_grad(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """d loss / d scores: softmax over all minus softmax over positives."""
    d = _softmax(scores)
    pos = _softmax(scores[mask])
    out = d.copy()
    out[mask] -= pos
    return out


def _score_backward(
    dscores: np.ndarray, cache: ForwardCache, params: ScorerParams
) -> dict[str, np.ndarray]:
    """Gradients of every parameter tensor given d loss / d scores.

    Mirrors the forward stage by stage, in reverse. Input gradients
    (frames, query) are intentionally dropped: the encoder is frozen.
    """
    lam, base, mean_sub, s = cache.lam, cache.base, cache.mean_sub, cache.s
    n, K = s.shape

    # Blend: score = lam * base + (1 - lam) * mean_sub, lam = sigmoid(logit).
    dlam = float(np.sum(dscores * (base - mean_sub)))
    g_lambda_logit = np.array([dlam * lam * (1.0 - lam)])
    ds = (dscores * (1.0 - lam))[:, None] / K * np.ones((1, K))
    # The base-cosine branch touches only frozen inputs, nothing to do.

    # Tempered cosines: s = cos / gamma, gamma = exp(gamma_logit),
    # so d s / d gamma_logit = -s.
    g_gamma_logit = -(ds * s).sum(axis=0)
    dcos = np.where(cache.sub_degen, 0.0, ds / params.gamma[None, :])

    # Cosine: c = p.r / (|p||r|); dc/dp = r/(|p||r|) - c p/|p|^2, and
    # symmetrically for r. Degenerate entries were pinned to zero in the
    # forward, so their gradient is zero; the safe denominators below only
    # keep masked-out arithmetic finite.
    safe_pn = np.where(cache.sub_degen, 1.0, cache.p_norm)
    safe_rn = np.where(cache.r_norm == 0.0, 1.0, cache.r_norm)
    denom = safe_pn * safe_rn[None, :]
    dP = dcos[:, :, None] * (
        cache.r[None, :, :] / denom[:, :, None]
        - cache.cos_sub[:, :, None] * cache.P / (safe_pn**2)[:, :, None]
    )
    coeff = (dcos * cache.cos_sub).sum(axis=0)
    dr = (
        np.einsum("nk,nkc->kc", dcos / denom, cache.P)
        - (coeff / safe_rn**2)[:, None] * cache.r
    )
    g_head_wv = np.einsum("nkc,nd->kcd", dP, cache.U)
    g_head_wq = dr[:, :, None] * cache.q[None, None, :]
    dU = np.einsum("nkc,kcd->nd", dP, params.head_wv.value)

    # Gate: u = h * sigmoid(z), z = h Wh^T + q Wq^T + b.
    dG = dU * cache.H
    dH = dU * cache.G
    dZ = dG * cache.G * (1.0 - cache.G)
    g_gate_wh = dZ.T @ cache.H
    g_gate_wq = np.outer(dZ.sum(axis=0), cache.q)
    g_gate_b = dZ.sum(axis=0)
    dH = dH + dZ @ params.gate_wh.value

    # Attention: h = v + sum_o alpha[., o] * Vhat[. - o], banded softmax.
    V, Ahat, Khat, Vhat, alpha = cache.V, cache.Ahat, cache.Khat, cache.Vhat, cache.alpha
    n, d = V.shape
    w = alpha.shape[1]
    scale = 1.0 / np.sqrt(d)
    dalpha = np.zeros_like(alpha)
    dVhat = np.zeros_like(Vhat)
    for o in range(w):
        dalpha[o:, o] = np.einsum("nd,nd->n", dH[o:], Vhat[: n - o])
        dVhat[: n - o] += dH[o:] * alpha[o:, o, None]
    dE = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    dAhat = np.zeros_like(Ahat)
    dKhat = np.zeros_like(Khat)
    for o in range(w):
        dAhat[o:] += scale * dE[o:, o, None] * Khat[: n - o]
        dKhat[: n - o] += scale * dE[o:, o, None] * Ahat[o:]

    return {
        "attn_q": dAhat.T @ V,
        "attn_k": dKhat.T @ V,
        "attn_v": dVhat.T @ V,
        "gate_wh": g_gate_wh,
        "gate_wq": g_gate_wq,
        "gate_b": g_gate_b,
        "head_wv": g_head_wv,
        "head_wq": g_head_wq,
        "gamma_logit": g_gamma_logit,
        "lambda_logit": g_lambda_logit,
    }


def backward(
    example: TrainingExample, params: ScorerParams, config: ScorerConfig
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact parameter gradients for one example.

    Gradients are returned, not accumulated; batch accumulation is a
    plain sum over examples (done in ascending example order by `train`).
    """
    if not example.usable:
        raise ValueError("example needs at least one positive and one negative")
    scores, cache = forward(example.frames, example.query, params, config)
    loss = infonce_loss(scores, example.positive_mask)
    dscores = _infonce_grad(scores, example.positive_mask)
    grads = _score_backward(dscores, cache, params)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"gradient:{name}")
    return loss, grads


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g**2).sum()) for g in grads.values())))


def adam_step(
    params: ScorerParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    config: TrainConfig,
) -> None:
    """Bias-corrected adaptive-moment update, in place.

    With clip_norm set, the whole gradient is rescaled by a single factor
    whenever its global norm exceeds the limit, before any moments move.
    """
    if config.clip_norm is not None:
        norm = _global_norm(grads)
        if norm > config.clip_norm:
            factor = config.clip_norm / norm
            grads = {k: g * factor for k, g in grads.items()}
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    for name in TENSOR_NAMES:
        g = grads[name]
        tensor = params.tensors()[name]
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1**t)
        v_hat = state.v[name] / (1 - b2**t)
        tensor.value -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)


def params_checksum(params: ScorerParams) -> int:
    """Additive checksum over all tensor bytes in the fixed tensor order."""
    blob = b"".join(
        np.ascontiguousarray(t.value, dtype="<f8").tobytes(order="C")
        for t in params.tensors().values()
    )
    return additive_checksum(blob)


def train(
    dataset: Sequence[TrainingExample],
    sconf: ScorerConfig,
    tconf: TrainConfig,
    log_lines: list[str] | None = None,
) -> tuple[ScorerParams, TrainReport]:
    """Deterministic mini-batch training loop.

    Unusable examples (all-positive or all-negative masks) are skipped
    and counted. Every epoch reshuffles with the seeded generator; batch
    gradients are summed in ascending example index, then averaged.
    """
    usable = [ex for ex in dataset if ex.usable]
    skipped = len(dataset) - len(usable)
    if not usable:
        raise ValueError(f"no usable examples (skipped {skipped})")

    params = init_scorer(sconf)
    state = OptimizerState.for_params(params)
    rng = Prng(tconf.seed)
    report = TrainReport(skipped=skipped)

    for epoch in range(tconf.epochs):
        order = rng.permutation(len(usable))
        total = 0.0
        for lo in range(0, len(order), tconf.batch_size):
            batch = sorted(order[lo : lo + tconf.batch_size].tolist())
            summed: dict[str, np.ndarray] | None = None
            for idx in batch:
                loss, grads = backward(usable[idx], params, sconf)
                total += loss
                if summed is None:
                    summed = grads
                else:
                    for name in TENSOR_NAMES:
                        summed[name] += grads[name]
            assert summed is not None
            mean_grads = {k: g / len(batch) for k, g in summed.items()}
            adam_step(params, mean_grads, state, tconf)
        epoch_mean = total / len(usable)
        if not np.isfinite(epoch_mean):
            raise NonFiniteError(f"epoch {epoch} mean loss")
        report.epoch_losses.append(float(epoch_mean))
        if log_lines is not None:
            log_lines.append(f"{epoch}\t{epoch_mean:.10f}")

    report.params_checksum = params_checksum(params)
    return params, report


def density_ratio_probe(
    params: ScorerParams,
    config: ScorerConfig,
    generator,
    n_samples: int = 512,
    seed: int = 1,
) -> float:
    """Spearman rank correlation between scores and the generator's true
    log density ratio on a fresh sample.

    The generator must provide sample(rng, n) -> (frames, labels),
    log_ratio(frames) -> reals, and a query vector. Identical classes
    give a constant ratio; the correlation is then undefined (nan).
    """
    rng = Prng(seed)
    X, _ = generator.sample(rng, n_samples)
    truth = np.asarray(generator.log_ratio(X), dtype=np.float64)
    if np.allclose(truth, truth[0]):
        return float("nan")
    scores = score_frames(X, generator.query, params, config)
    rho, _ = stats.spearmanr(scores, truth)
    return float(rho)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_tensor: dict[str, float]

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-4

REL_ERROR_FLOOR = 1e-4  # denominators below this count as "tiny"; see ledger


def _pack(params: ScorerParams) -> np.ndarray:
    return np.concatenate([t.value.ravel() for t in params.tensors().values()])


def _unpack_into(flat: np.ndarray, params: ScorerParams) -> None:
    pos = 0
    for t in params.tensors().values():
        size = t.value.size
        t.value[...] = flat[pos : pos + size].reshape(t.value.shape)
        pos += size


def gradient_check(
    seed: int,
    n_frames: int = 4,
    dim: int = 6,
    subspaces: int = 2,
    window: int = 2,
    mutate: Callable[[dict[str, np.ndarray]], dict[str, np.ndarray]] | None = None,
) -> GradCheckResult:
    """Compare analytic gradients against central finite differences on one
    random instance; the two computations share no code path.

    `mutate` can corrupt the analytic gradients before comparison; it
    exists so the check itself can be shown to catch a broken gradient.
    """
    rng = Prng(seed)
    config = ScorerConfig(dim=dim, subspaces=subspaces, window=window, seed=seed)
    params = init_scorer(config)
    for t in params.tensors().values():
        t.value += 0.05 * rng.normal(size=t.value.shape)

    frames = rng.normal(size=(n_frames, dim))
    query = rng.normal(size=dim)
    mask = np.zeros(n_frames, dtype=bool)
    mask[: max(1, n_frames // 2)] = True
    example = TrainingExample(frames, query, mask)

    _, grads = backward(example, params, config)
    if mutate is not None:
        grads = mutate(grads)
    analytic = np.concatenate([grads[name].ravel() for name in TENSOR_NAMES])

    base = _pack(params)
    probe = init_scorer(config)

    def loss_at(flat: np.ndarray) -> float:
        _unpack_into(flat, probe)
        scores = score_frames(frames, query, probe, config)
        return infonce_loss(scores, mask)

    numeric = finite_diff_grad(loss_at, base)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_ERROR_FLOOR)
    rel = np.abs(analytic - numeric) / denom

    per_tensor: dict[str, float] = {}
    pos = 0
    for name in TENSOR_NAMES:
        size = params.tensors()[name].value.size
        per_tensor[name] = float(rel[pos : pos + size].max())
        pos += size
    return GradCheckResult(max_rel_error=float(rel.max()), per_tensor=per_tensor)
