"""Tests for the frame scoring pipeline.

`oracle_scores` re-implements the whole pipeline with per-frame Python
loops and none of the banded/batched tricks of the module under test;
the two routes must agree to machine precision. The golden vector below
was produced by that oracle and is frozen against regressions.
"""

import numpy as np
import pytest

from evscore.numerics import DegenerateInputWarning, Prng
from evscore.scoring import (
    NonFiniteError,
    ScorerConfig,
    ScorerParams,
    aggregate,
    evidence_score,
    forward,
    gate,
    init_scorer,
    score_frames,
    subspace_scores,
)


def oracle_scores(V, q, params: ScorerParams, window: int) -> np.ndarray:
    """Independent route: explicit windows, one frame at a time."""
    n, d = V.shape
    Wq_a, Wk, Wv = params.attn_q.value, params.attn_k.value, params.attn_v.value
    H = np.zeros_like(V)
    for t in range(n):
        js = list(range(max(0, t - window + 1), t + 1))
        e = np.array([(Wq_a @ V[t]) @ (Wk @ V[j]) / np.sqrt(d) for j in js])
        ex = np.exp(e - e.max())
        a = ex / ex.sum()
        H[t] = V[t] + sum(a[i] * (Wv @ V[j]) for i, j in enumerate(js))

    Wh, Wqg, b = params.gate_wh.value, params.gate_wq.value, params.gate_b.value
    K = params.head_wv.value.shape[0]
    gamma = np.exp(params.gamma_logit.value)
    lam = 1.0 / (1.0 + np.exp(-params.lambda_logit.value[0]))
    out = np.zeros(n)
    for t in range(n):
        z = Wh @ H[t] + Wqg @ q + b
        u = H[t] / (1.0 + np.exp(-z))
        s = []
        for k in range(K):
            p = params.head_wv.value[k] @ u
            r = params.head_wq.value[k] @ q
            s.append((p @ r) / (np.linalg.norm(p) * np.linalg.norm(r)) / gamma[k])
        base = (V[t] @ q) / (np.linalg.norm(V[t]) * np.linalg.norm(q))
        out[t] = lam * base + (1.0 - lam) * np.mean(s)
    return out


@pytest.fixture
def tiny():
    config = ScorerConfig(dim=8, subspaces=2, window=2, lambda_init=0.5, seed=123)
    params = init_scorer(config)
    frames = Prng(7).normal(size=(4, 8))
    query = Prng(8).normal(size=8)
    return config, params, frames, query


# Output of oracle_scores on the `tiny` fixture, cross-checked against
# forward() at the time of freezing (agreement to 1 ulp).
GOLDEN_TINY_SCORES = np.array(
    [
        -0.07208253685565255,
        0.14557334510365885,
        0.34849959406522407,
        0.36110029798826954,
    ]
)


class TestConfig:
    def test_subspaces_must_divide_dim(self):
        with pytest.raises(ValueError):
            ScorerConfig(dim=10, subspaces=3)

    def test_window_positive(self):
        with pytest.raises(ValueError):
            ScorerConfig(dim=8, subspaces=2, window=0)

    def test_lambda_init_open_interval(self):
        for bad in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                ScorerConfig(dim=8, subspaces=2, lambda_init=bad)

    def test_head_dim(self):
        assert ScorerConfig(dim=768, subspaces=8).head_dim == 96


class TestInit:
    def test_deterministic(self):
        config = ScorerConfig(dim=8, subspaces=2, seed=4)
        a, b = init_scorer(config), init_scorer(config)
        for name, t in a.tensors().items():
            np.testing.assert_array_equal(t.value, b.tensors()[name].value)

    def test_shapes(self):
        config = ScorerConfig(dim=12, subspaces=3, window=5)
        params = init_scorer(config)
        assert params.attn_q.value.shape == (12, 12)
        assert params.gate_b.value.shape == (12,)
        assert params.head_wv.value.shape == (3, 4, 12)
        assert params.gamma_logit.value.shape == (3,)
        assert params.lambda_logit.value.shape == (1,)

    def test_starting_temperatures_and_blend(self):
        config = ScorerConfig(dim=8, subspaces=2, lambda_init=0.3)
        params = init_scorer(config)
        np.testing.assert_allclose(params.gamma, 1.0)
        assert params.lambda_value == pytest.approx(0.3, abs=1e-12)


class TestForwardAgainstOracle:
    def test_matches_loop_oracle(self, tiny):
        config, params, frames, query = tiny
        scores, _ = forward(frames, query, params, config)
        np.testing.assert_allclose(
            scores, oracle_scores(frames, query, params, config.window), atol=1e-12
        )

    def test_golden_values(self, tiny):
        config, params, frames, query = tiny
        scores, _ = forward(frames, query, params, config)
        np.testing.assert_allclose(scores, GOLDEN_TINY_SCORES, atol=1e-12)

    def test_oracle_agreement_on_random_instances(self):
        rng = Prng(42)
        for trial in range(5):
            config = ScorerConfig(
                dim=6, subspaces=2 + trial % 2 * 1, window=1 + trial, seed=trial
            )
            params = init_scorer(config)
            n = 3 + trial
            frames = rng.normal(size=(n, 6))
            query = rng.normal(size=6)
            scores, _ = forward(frames, query, params, config)
            np.testing.assert_allclose(
                scores,
                oracle_scores(frames, query, params, config.window),
                atol=1e-12,
            )


class TestBlendEndpoints:
    def test_lambda_one_reduces_to_raw_cosine(self, tiny):
        config, params, frames, query = tiny
        # sigmoid(40) rounds to exactly 1.0 in 64-bit floats.
        params.lambda_logit.value[:] = 40.0
        scores, _ = forward(frames, query, params, config)
        qn = np.linalg.norm(query)
        base = frames @ query / (np.linalg.norm(frames, axis=1) * qn)
        np.testing.assert_allclose(scores, base, atol=1e-12)

    def test_lambda_zero_reduces_to_head_mean(self, tiny):
        config, params, frames, query = tiny
        params.lambda_logit.value[:] = -40.0
        scores, cache = forward(frames, query, params, config)
        np.testing.assert_allclose(scores, cache.s.mean(axis=1), atol=1e-12)


class TestTemporalStructure:
    def test_future_frames_do_not_change_past_scores(self, tiny):
        config, params, frames, query = tiny
        before, _ = forward(frames, query, params, config)
        tampered = frames.copy()
        tampered[3] = Prng(99).normal(size=8)
        after, _ = forward(tampered, query, params, config)
        np.testing.assert_array_equal(before[:3], after[:3])

    def test_influence_limited_to_window(self):
        config = ScorerConfig(dim=6, subspaces=2, window=3, seed=1)
        params = init_scorer(config)
        rng = Prng(2)
        frames = rng.normal(size=(10, 6))
        query = rng.normal(size=6)
        before, _ = forward(frames, query, params, config)
        tampered = frames.copy()
        tampered[2] = rng.normal(size=6)
        after, _ = forward(tampered, query, params, config)
        # Frame 2 reaches positions 2..4 only (window 3).
        np.testing.assert_array_equal(before[:2], after[:2])
        np.testing.assert_array_equal(before[5:], after[5:])
        assert not np.allclose(before[2:5], after[2:5])

    def test_window_larger_than_sequence_is_full_history(self, tiny):
        _, params, frames, _ = tiny
        h_wide = aggregate(frames, params, 100)
        h_exact = aggregate(frames, params, 4)
        np.testing.assert_array_equal(h_wide, h_exact)

    def test_zero_value_projection_leaves_residual(self, tiny):
        config, params, frames, query = tiny
        params.attn_v.value[:] = 0.0
        np.testing.assert_array_equal(
            aggregate(frames, params, config.window), frames
        )


class TestGateAndHeads:
    def test_gate_shrinks_channels(self, tiny):
        _, params, frames, query = tiny
        u = gate(frames, query, params)
        assert u.shape == frames.shape
        assert np.all(np.abs(u) <= np.abs(frames) + 1e-15)
        assert np.all(u * frames >= 0)  # sign never flips

    def test_gate_single_vector(self, tiny):
        _, params, frames, query = tiny
        single = gate(frames[0], query, params)
        stacked = gate(frames, query, params)
        np.testing.assert_allclose(single, stacked[0], atol=1e-15)

    def test_subspace_scores_shapes(self, tiny):
        _, params, frames, query = tiny
        one = subspace_scores(frames[0], query, params)
        many = subspace_scores(frames, query, params)
        assert one.shape == (2,)
        assert many.shape == (4, 2)
        np.testing.assert_allclose(one, many[0], atol=1e-15)

    def test_degenerate_projection_warns(self, tiny):
        _, params, frames, query = tiny
        with pytest.warns(DegenerateInputWarning):
            s = subspace_scores(np.zeros(8), query, params)
        np.testing.assert_array_equal(s, 0.0)

    def test_temperature_divides_scores(self, tiny):
        _, params, frames, query = tiny
        cold = subspace_scores(frames, query, params)
        params.gamma_logit.value[:] = np.log(2.0)
        hot = subspace_scores(frames, query, params)
        np.testing.assert_allclose(hot, cold / 2.0, atol=1e-12)

    def test_evidence_score_at_lambda_one_is_cosine(self, tiny):
        _, params, frames, query = tiny
        params.lambda_logit.value[:] = 40.0
        v = frames[0]
        got = evidence_score(v, frames[1], query, params)
        want = float(v @ query / (np.linalg.norm(v) * np.linalg.norm(query)))
        assert got == pytest.approx(want, abs=1e-12)


class TestValidation:
    def test_empty_sequence_rejected(self, tiny):
        config, params, _, query = tiny
        with pytest.raises(ValueError):
            forward(np.zeros((0, 8)), query, params, config)

    def test_ragged_frame_named(self, tiny):
        config, params, _, query = tiny
        rows = [np.zeros(8), np.zeros(7), np.zeros(8)]
        with pytest.raises(ValueError, match="frame 1"):
            forward(rows, query, params, config)

    def test_nonfinite_frame_named(self, tiny):
        config, params, frames, query = tiny
        frames = frames.copy()
        frames[2, 0] = np.inf
        with pytest.raises(ValueError, match="frame 2"):
            forward(frames, query, params, config)

    def test_query_shape_checked(self, tiny):
        config, params, frames, _ = tiny
        with pytest.raises(ValueError, match="query"):
            forward(frames, np.zeros(5), params, config)

    def test_nonfinite_stage_reported(self, tiny):
        config, params, frames, query = tiny
        cases = [
            ("attn_q", "aggregate"),
            ("gate_wh", "gate"),
            ("head_wv", "subspace"),
        ]
        for tensor, stage in cases:
            bad = init_scorer(config)
            bad.tensors()[tensor].value[..., 0] = np.nan
            with pytest.raises(NonFiniteError, match=stage):
                forward(frames, query, bad, config)

    def test_score_frames_deterministic(self, tiny):
        config, params, frames, query = tiny
        a = score_frames(frames, query, params, config)
        b = score_frames(frames, query, params, config)
        np.testing.assert_array_equal(a, b)
