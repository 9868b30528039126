"""Command-line entry point.

One binary, subcommand per workflow:

    evscore oracle      exact information measures on a discrete model
    evscore train       fit the scorer on embeddings + annotations
    evscore score       score a video's frames against a query
    evscore select      pick frames from a score file under a budget
    evscore eval-coverage  evidence coverage of selections vs annotations
    evscore gradcheck   analytic vs finite-difference gradients

Every run prints a resolved-config block first, so the output is
self-describing; outputs are written atomically and runs are
deterministic given their flags.

Exit codes: 0 success; 2 input or usage error; 3 invariant failure
(an internal property the run was supposed to uphold did not hold).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import infotheory
from .io import (
    FileFormatError,
    atomic_write_text,
    load_annotations,
    load_checkpoint,
    load_embeddings,
    save_checkpoint,
)
from .numerics import Prng
from .scoring import NonFiniteError, ScorerConfig, score_frames
from .selection import (
    Selection,
    SelectionConfig,
    coverage,
    load_selections,
    save_selections,
    select,
)
from .training import (
    TrainConfig,
    TrainingExample,
    gradient_check,
    label_frames,
    train,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVARIANT = 3

ORACLE_TOL = 1e-9
GRAD_TOL = 1e-4
APPROX_FLOOR = 1.0 - 1.0 / np.e


def _print_config(name: str, values: dict) -> None:
    print(f"resolved-config [{name}]")
    for key in sorted(values):
        print(f"  {key} = {values[key]}")


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def cmd_oracle(args) -> int:
    if (args.model_fixture is None) == (args.random is None):
        print("error: provide exactly one of --model-fixture or --random", file=sys.stderr)
        return EXIT_INPUT
    if args.model_fixture is not None:
        model = infotheory.load_model(args.model_fixture)
        source = str(args.model_fixture)
    else:
        model = infotheory.random_factorized(args.random, Prng(args.seed))
        source = f"random factorized, {args.random} features, seed {args.seed}"
    budget = min(args.budget, model.n_features)
    _print_config(
        "oracle",
        {
            "source": source,
            "features": model.n_features,
            "answers": model.n_answers,
            "factorized": model.factorized,
            "budget": budget,
            "tolerance": ORACLE_TOL,
        },
    )

    singles = infotheory.singleton_scores(model)
    print("singleton values:", " ".join(f"{v:.6f}" for v in singles))
    full = infotheory.conditional_mi(model, range(model.n_features))
    print(f"value of all features: {full:.6f}")

    greedy = infotheory.greedy_select(model, budget)
    greedy_value = infotheory.conditional_mi(model, greedy)
    exact = infotheory.exhaustive_select(model, budget)
    exact_value = infotheory.conditional_mi(model, exact)
    ub = infotheory.modular_upper_bound(model, greedy)
    print(f"greedy selection: {sorted(greedy)} value {greedy_value:.6f}")
    print(f"exhaustive selection: {list(exact)} value {exact_value:.6f}")
    print(f"modular upper bound on greedy set: {ub:.6f}")
    ratio = greedy_value / exact_value if exact_value > 0 else 1.0
    print(f"greedy/exhaustive ratio: {ratio:.6f} (floor {APPROX_FLOOR:.6f})")

    report = infotheory.check_submodular(model, tol=ORACLE_TOL)
    print(f"monotonicity violations: {len(report.monotone_violations)}")
    tag = "" if model.factorized else " (expected counterexample outside the factorized family)"
    print(f"submodularity violations: {len(report.submodular_violations)}{tag}")

    failed = False
    if not report.monotone:
        print("FAIL: information value decreased when a feature was added")
        failed = True
    if model.factorized:
        if not report.submodular:
            print("FAIL: diminishing returns violated on a factorized model")
            failed = True
        if ratio < APPROX_FLOOR - ORACLE_TOL:
            print("FAIL: greedy fell below the approximation floor")
            failed = True
        for mask in range(1 << model.n_features):
            subset = infotheory._mask_indices(mask)
            bound = infotheory.modular_upper_bound(model, subset)
            value = infotheory.conditional_mi(model, subset)
            if bound < value - ORACLE_TOL:
                print(f"FAIL: modular bound below value on subset {subset}")
                failed = True
                break
    if failed:
        return EXIT_INVARIANT
    print("oracle checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_SCORER_KEYS = {"dim", "subspaces", "window", "lambda_init", "scorer_seed"}
_TRAIN_KEYS = {
    "learning_rate",
    "epochs",
    "batch_size",
    "beta1",
    "beta2",
    "eps",
    "seed",
    "clip_norm",
}


def _load_configs(path) -> tuple[ScorerConfig, TrainConfig]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    unknown = set(doc) - _SCORER_KEYS - _TRAIN_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    sconf = ScorerConfig(
        dim=int(doc.get("dim", 768)),
        subspaces=int(doc.get("subspaces", 8)),
        window=int(doc.get("window", 8)),
        lambda_init=float(doc.get("lambda_init", 0.5)),
        seed=int(doc.get("scorer_seed", 0)),
    )
    tconf = TrainConfig(**{k: doc[k] for k in _TRAIN_KEYS if k in doc})
    return sconf, tconf


def _load_dataset(emb_dir, ann_path) -> list[TrainingExample]:
    emb_dir = Path(emb_dir)
    examples = []
    for rec in load_annotations(ann_path):
        frames = load_embeddings(emb_dir / f"{rec.video_id}.frames.evsb")
        query = load_embeddings(emb_dir / f"{rec.query_id}.query.evsb")
        if query.shape[0] != 1:
            raise ValueError(
                f"query file for {rec.query_id} has {query.shape[0]} rows, expected 1"
            )
        if frames.shape[0] != rec.n_frames:
            raise ValueError(
                f"{rec.video_id}: annotation says {rec.n_frames} frames, "
                f"file has {frames.shape[0]}"
            )
        mask = label_frames(rec.segments, rec.n_frames, rec.fps)
        examples.append(TrainingExample(frames, query[0], mask))
    return examples


def cmd_train(args) -> int:
    sconf, tconf = _load_configs(args.config)
    _print_config("train", {**asdict(sconf), **asdict(tconf)})
    dataset = _load_dataset(args.embeddings, args.annotations)
    log_lines: list[str] = []
    try:
        params, report = train(dataset, sconf, tconf, log_lines=log_lines)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    save_checkpoint(args.out, params, sconf, tconf.seed)
    loss_log = args.loss_log or (str(args.out) + ".loss.txt")
    atomic_write_text(loss_log, "".join(line + "\n" for line in log_lines))
    print(f"examples: {len(dataset)} (skipped {report.skipped})")
    for epoch, loss in enumerate(report.epoch_losses):
        print(f"epoch {epoch}: mean loss {loss:.6f}")
    print(f"checkpoint written: {args.out}")
    print(f"params checksum: {report.params_checksum:#018x}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# score / select / eval-coverage
# ---------------------------------------------------------------------------


def cmd_score(args) -> int:
    params, config, _seed = load_checkpoint(args.ckpt)
    _print_config("score", asdict(config))
    frames = load_embeddings(args.video_emb)
    query = load_embeddings(args.query_emb)
    if query.shape[0] != 1:
        print(
            f"error: query file has {query.shape[0]} rows, expected 1",
            file=sys.stderr,
        )
        return EXIT_INPUT
    if frames.shape[1] != config.dim or query.shape[1] != config.dim:
        print(
            f"error: checkpoint dim {config.dim} vs embeddings "
            f"{frames.shape[1]}/{query.shape[1]}",
            file=sys.stderr,
        )
        return EXIT_INPUT
    scores = score_frames(frames, query[0], params, config)
    atomic_write_text(args.out, "".join(f"{s:.17g}\n" for s in scores))
    print(f"scored {scores.shape[0]} frames -> {args.out}")
    return EXIT_OK


def _read_scores(path) -> np.ndarray:
    values = [
        float(line) for line in Path(path).read_text().splitlines() if line.strip()
    ]
    return np.asarray(values, dtype=np.float64)


def cmd_select(args) -> int:
    config = SelectionConfig(bins=args.bins, per_bin=args.per_bin)
    _print_config(
        "select",
        {"bins": config.bins, "per_bin": config.per_bin, "budget": config.budget},
    )
    scores = _read_scores(args.scores)
    sel = select(scores, config, query_id=args.query_id)
    save_selections(args.out, [sel])
    print(f"selected {sel.indices.size} of {scores.size} frames -> {args.out}")
    print("indices:", " ".join(str(i) for i in sel.indices))
    return EXIT_OK


def cmd_eval_coverage(args) -> int:
    selections = load_selections(args.selections)
    records = load_annotations(args.annotations)
    _print_config(
        "eval-coverage",
        {"selections": len(selections), "annotations": len(records)},
    )
    if not selections:
        print("error: no selections to evaluate", file=sys.stderr)
        return EXIT_INPUT
    by_query = {rec.query_id: rec for rec in records}
    hits = 0
    for sel in selections:
        rec = by_query.get(sel.query_id)
        if rec is None:
            print(f"error: no annotation for query '{sel.query_id}'", file=sys.stderr)
            return EXIT_INPUT
        hits += coverage(sel, rec.segments, rec.fps)
    rate = hits / len(selections)
    print(f"coverage: {100.0 * rate:.2f}%")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    _print_config(
        "gradcheck",
        {
            "seed": args.seed,
            "instances": args.instances,
            "frames": args.frames,
            "dim": args.dim,
            "subspaces": args.subspaces,
            "window": args.window,
            "tolerance": GRAD_TOL,
        },
    )
    mutate = None
    if args.inject_sign_flip:
        def mutate(grads):
            grads["gate_b"] = -grads["gate_b"]
            return grads

    worst = 0.0
    for i in range(args.instances):
        result = gradient_check(
            seed=args.seed + i,
            n_frames=args.frames,
            dim=args.dim,
            subspaces=args.subspaces,
            window=args.window,
            mutate=mutate,
        )
        print(f"instance {i}: max relative error {result.max_rel_error:.3e}")
        worst = max(worst, result.max_rel_error)
    print(f"overall max relative error: {worst:.3e}")
    if worst >= GRAD_TOL:
        print("FAIL: analytic and finite-difference gradients disagree")
        return EXIT_INVARIANT
    print("gradient check passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evscore",
        description="Query-conditioned frame scoring, selection, and verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("oracle", help="exact information measures on a discrete model")
    p.add_argument("--model-fixture", type=Path, help="JSON model file")
    p.add_argument("--random", type=int, help="generate a random factorized model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=2)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("train", help="train the scorer")
    p.add_argument("--embeddings", type=Path, required=True, help="embedding directory")
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--config", type=Path, required=True, help="JSON config file")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--loss-log", type=Path, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a video against a query")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--video-emb", type=Path, required=True)
    p.add_argument("--query-emb", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("select", help="budgeted frame selection from scores")
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--bins", type=int, required=True)
    p.add_argument("--per-bin", type=int, required=True)
    p.add_argument("--query-id", type=str, default="")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("eval-coverage", help="evidence coverage of selections")
    p.add_argument("--selections", type=Path, required=True)
    p.add_argument("--annotations", type=Path, required=True)
    p.set_defaults(func=cmd_eval_coverage)

    p = sub.add_parser("gradcheck", help="verify analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--dim", type=int, default=6)
    p.add_argument("--subspaces", type=int, default=2)
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (FileFormatError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
