"""Exact information measures on small discrete evidence models.

A model is a joint distribution p(f_1 .. f_n, O) between n frame
features and a discrete answer variable O, stored as a dense array with
one axis per feature and the answer axis last. Everything here is exact
marginalization, so feature counts are capped (2**n table entries).

The quantity of interest for a feature subset S is the mutual
information I(S; O) = H(O) - H(O | S): how much of the answer's
uncertainty the subset removes. All entropies are in nats and use the
0 * log 0 = 0 convention.

Two structural facts drive the test suites built on this module:

* I(S; O) is monotone in S for every model (conditioning never
  increases entropy).
* It is submodular when features are conditionally independent given
  the answer (the ``factorized`` builders), but not in general: with
  O = f1 XOR f2 each feature alone is worthless while the pair reveals
  everything, so the pair's gain grows with context.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .io import atomic_write_text
from .numerics import Prng

__all__ = [
    "DiscreteModel",
    "copy_model",
    "xor_model",
    "duplicate_model",
    "random_factorized",
    "random_joint",
    "conditional_mi",
    "expected_loglik",
    "singleton_scores",
    "modular_upper_bound",
    "greedy_select",
    "exhaustive_select",
    "verify_loglik_equivalence",
    "SubmodularityReport",
    "check_submodular",
    "save_model",
    "load_model",
]

MAX_EXHAUSTIVE_FEATURES = 14
MAX_PAIRWISE_FEATURES = 10

_PROB_TOL = 1e-6


@dataclass(frozen=True)
class DiscreteModel:
    """Dense joint over n features and an answer; feature axes first."""

    joint: np.ndarray
    factorized: bool = False
    name: str = ""

    def __post_init__(self):
        joint = np.asarray(self.joint, dtype=np.float64)
        if joint.ndim < 2:
            raise ValueError("joint needs at least one feature axis and the answer axis")
        if np.any(joint < 0):
            raise ValueError("joint has negative entries")
        total = float(joint.sum())
        if abs(total - 1.0) > _PROB_TOL:
            raise ValueError(f"joint sums to {total!r}, expected 1")
        object.__setattr__(self, "joint", joint)

    @property
    def n_features(self) -> int:
        return self.joint.ndim - 1

    @property
    def cards(self) -> tuple[int, ...]:
        return self.joint.shape[:-1]

    @property
    def n_answers(self) -> int:
        return self.joint.shape[-1]

    def answer_marginal(self) -> np.ndarray:
        return self.joint.sum(axis=tuple(range(self.n_features)))


def _entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64).ravel()
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def _subset_marginal(model: DiscreteModel, subset: Sequence[int]) -> np.ndarray:
    """p(f_S, O): sum out every feature axis not in S."""
    keep = set(subset)
    for i in keep:
        if not 0 <= i < model.n_features:
            raise ValueError(f"feature index {i} out of range")
    drop = tuple(i for i in range(model.n_features) if i not in keep)
    return model.joint.sum(axis=drop) if drop else model.joint


def conditional_mi(model: DiscreteModel, subset: Sequence[int]) -> float:
    """I(S; O) = H(S) + H(O) - H(S, O), exact, in nats."""
    q = _subset_marginal(model, subset)
    h_so = _entropy(q)
    h_s = _entropy(q.sum(axis=-1))
    h_o = _entropy(model.answer_marginal())
    return h_s + h_o - h_so


def expected_loglik(model: DiscreteModel, subset: Sequence[int]) -> float:
    """E[log p(O | f_S)] = -H(O | S). Differs from the MI by H(O) only."""
    q = _subset_marginal(model, subset)
    return _entropy(q.sum(axis=-1)) - _entropy(q)


def singleton_scores(model: DiscreteModel) -> np.ndarray:
    return np.array(
        [conditional_mi(model, (i,)) for i in range(model.n_features)]
    )


def modular_upper_bound(model: DiscreteModel, subset: Sequence[int]) -> float:
    """Sum of one-feature values; an upper bound on the true subset value
    whenever the model is factorized."""
    return float(sum(conditional_mi(model, (i,)) for i in subset))


# ---------------------------------------------------------------------------
# Model builders
# ---------------------------------------------------------------------------


def copy_model(flip: float = 0.0) -> DiscreteModel:
    """One binary feature that equals a uniform binary answer, except for
    an optional flip probability."""
    if not 0 <= flip <= 1:
        raise ValueError(f"flip probability {flip} outside [0, 1]")
    joint = np.empty((2, 2))
    for f in range(2):
        for o in range(2):
            joint[f, o] = 0.5 * ((1 - flip) if f == o else flip)
    return DiscreteModel(joint, factorized=True, name="copy")


def xor_model() -> DiscreteModel:
    """O = f1 XOR f2 with independent uniform inputs. Each feature alone
    carries zero information; together they determine the answer."""
    joint = np.zeros((2, 2, 2))
    for f1 in range(2):
        for f2 in range(2):
            joint[f1, f2, f1 ^ f2] = 0.25
    return DiscreteModel(joint, factorized=False, name="xor")


def duplicate_model(flip_a: float = 0.1, flip_b: float = 0.3) -> DiscreteModel:
    """Three features over a uniform binary answer: a noisy copy, a second
    feature identical to the first, and an independent noisier copy.

    The literal duplicate makes redundancy visible: its marginal gain
    after the first pick is exactly zero, so a greedy pass must prefer
    the noisier-but-independent third feature.
    """
    joint = np.zeros((2, 2, 2, 2))
    for o in range(2):
        for fa in range(2):
            p_a = (1 - flip_a) if fa == o else flip_a
            for fc in range(2):
                p_c = (1 - flip_b) if fc == o else flip_b
                joint[fa, fa, fc, o] += 0.5 * p_a * p_c
    return DiscreteModel(joint, factorized=False, name="duplicate")


def _random_dist(rng: Prng, size: int) -> np.ndarray:
    # Bounded away from zero so no entropy term degenerates.
    raw = rng.uniform(0.1, 1.0, size=size)
    return raw / raw.sum()


def random_factorized(
    n_features: int, rng: Prng, n_answers: int = 2, cards: Sequence[int] | None = None
) -> DiscreteModel:
    """p(O) * prod_i p(f_i | O): features conditionally independent given
    the answer. Subset values are submodular on this family."""
    if cards is None:
        cards = [2] * n_features
    cards = list(cards)
    if len(cards) != n_features:
        raise ValueError("cards length must match n_features")
    joint = np.ones(tuple(cards) + (n_answers,))
    joint = joint * _random_dist(rng, n_answers)
    for i, card in enumerate(cards):
        cpt = np.stack(
            [_random_dist(rng, card) for _ in range(n_answers)], axis=1
        )  # (card, n_answers)
        shape = [1] * n_features + [n_answers]
        shape[i] = card
        joint = joint * cpt.reshape(shape)
    return DiscreteModel(joint, factorized=True, name=f"factorized-{n_features}")


def random_joint(
    n_features: int, rng: Prng, n_answers: int = 2, cards: Sequence[int] | None = None
) -> DiscreteModel:
    """Unstructured random joint; no independence, no submodularity promise."""
    if cards is None:
        cards = [2] * n_features
    shape = tuple(cards) + (n_answers,)
    raw = rng.uniform(0.05, 1.0, size=shape)
    joint = raw / raw.sum()
    return DiscreteModel(joint, factorized=False, name=f"joint-{n_features}")


# ---------------------------------------------------------------------------
# Subset selection
# ---------------------------------------------------------------------------


def greedy_select(model: DiscreteModel, m: int) -> list[int]:
    """Pick m features one at a time, each maximizing the value gain.

    Ties go to the lowest feature index. Returns indices in pick order.
    """
    if not 0 <= m <= model.n_features:
        raise ValueError(f"cannot select {m} of {model.n_features} features")
    selected: list[int] = []
    current = 0.0
    for _ in range(m):
        best_idx, best_gain = -1, -np.inf
        for i in range(model.n_features):
            if i in selected:
                continue
            gain = conditional_mi(model, selected + [i]) - current
            if gain > best_gain:
                best_idx, best_gain = i, gain
        selected.append(best_idx)
        current += best_gain
    return selected


def exhaustive_select(model: DiscreteModel, m: int) -> tuple[int, ...]:
    """Globally best size-m subset by brute force; ties resolve to the
    lexicographically smallest index tuple."""
    n = model.n_features
    if n > MAX_EXHAUSTIVE_FEATURES:
        raise ValueError(
            f"exhaustive search capped at {MAX_EXHAUSTIVE_FEATURES} features, got {n}"
        )
    if not 0 <= m <= n:
        raise ValueError(f"cannot select {m} of {n} features")
    best: tuple[int, ...] | None = None
    best_value = -np.inf
    for subset in itertools.combinations(range(n), m):
        value = conditional_mi(model, subset)
        if value > best_value:
            best, best_value = subset, value
    assert best is not None or m == 0
    return best if best is not None else ()


def verify_loglik_equivalence(model: DiscreteModel, m: int):
    """Return the best size-m subset under mutual information and under
    expected answer log-likelihood. The objectives differ by the constant
    H(O), so the argmaxes must coincide; both use the same tie-break."""
    n = model.n_features
    if n > MAX_EXHAUSTIVE_FEATURES:
        raise ValueError(
            f"exhaustive search capped at {MAX_EXHAUSTIVE_FEATURES} features, got {n}"
        )
    best_mi: tuple[int, ...] = ()
    best_ll: tuple[int, ...] = ()
    best_mi_value = -np.inf
    best_ll_value = -np.inf
    for subset in itertools.combinations(range(n), m):
        mi = conditional_mi(model, subset)
        ll = expected_loglik(model, subset)
        if mi > best_mi_value:
            best_mi, best_mi_value = subset, mi
        if ll > best_ll_value:
            best_ll, best_ll_value = subset, ll
    return best_mi, best_ll


# ---------------------------------------------------------------------------
# Structural checks
# ---------------------------------------------------------------------------


@dataclass
class SubmodularityReport:
    """Outcome of exhaustively checking monotonicity and diminishing returns."""

    n_features: int
    pairs_checked: int
    monotone_violations: list[tuple[tuple[int, ...], int, float]] = field(
        default_factory=list
    )
    submodular_violations: list[
        tuple[tuple[int, ...], tuple[int, ...], int, float]
    ] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        return not self.monotone_violations

    @property
    def submodular(self) -> bool:
        return not self.submodular_violations


def _mask_indices(mask: int) -> tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def check_submodular(model: DiscreteModel, tol: float = 1e-9) -> SubmodularityReport:
    """Check every (A subseteq B, f not in B) pair for diminishing returns
    and every (B, f) pair for monotone growth, exactly.

    A monotone violation is value(B + f) < value(B) - tol. A submodular
    violation is gain at A < gain at B - tol for the same added feature.
    """
    n = model.n_features
    if n > MAX_PAIRWISE_FEATURES:
        raise ValueError(
            f"pairwise check capped at {MAX_PAIRWISE_FEATURES} features, got {n}"
        )
    values = np.empty(1 << n)
    for mask in range(1 << n):
        values[mask] = conditional_mi(model, _mask_indices(mask))

    report = SubmodularityReport(n_features=n, pairs_checked=0)
    full = (1 << n) - 1
    for b in range(1 << n):
        rest = full & ~b
        f = rest
        while f:
            bit = f & -f
            gain_b = values[b | bit] - values[b]
            if gain_b < -tol:
                report.monotone_violations.append(
                    (_mask_indices(b), bit.bit_length() - 1, float(-gain_b))
                )
            f ^= bit
        # Proper submasks of b, standard descending enumeration.
        a = (b - 1) & b
        while True:
            f = rest
            while f:
                bit = f & -f
                gain_a = values[a | bit] - values[a]
                gain_b = values[b | bit] - values[b]
                report.pairs_checked += 1
                if gain_a < gain_b - tol:
                    report.submodular_violations.append(
                        (
                            _mask_indices(a),
                            _mask_indices(b),
                            bit.bit_length() - 1,
                            float(gain_b - gain_a),
                        )
                    )
                f ^= bit
            if a == 0:
                break
            a = (a - 1) & b
    return report


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------


def save_model(path, model: DiscreteModel) -> None:
    """JSON with the joint flattened row-major, feature axes before answer."""
    doc = {
        "cards": list(model.cards),
        "n_answers": model.n_answers,
        "joint": [float(x) for x in model.joint.ravel(order="C")],
        "factorized": model.factorized,
        "name": model.name,
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def load_model(path) -> DiscreteModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    cards = tuple(int(c) for c in doc["cards"])
    n_answers = int(doc["n_answers"])
    flat = np.asarray(doc["joint"], dtype=np.float64)
    expected = int(np.prod(cards, dtype=np.int64)) * n_answers
    if flat.size != expected:
        raise ValueError(
            f"{path}: joint has {flat.size} entries, shape implies {expected}"
        )
    joint = flat.reshape(cards + (n_answers,))
    return DiscreteModel(
        joint, factorized=bool(doc["factorized"]), name=str(doc.get("name", ""))
    )
