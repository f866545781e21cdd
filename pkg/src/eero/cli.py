"""Command line front end.

Subcommands cover the full pipeline: `synth` writes a synthetic
dataset, `calibrate` turns a labeled train split + unlabeled
calibration split into an exit policy for a budget, `infer` routes a
test split through a saved policy, `oracle` computes the offline
optimal assignment, and `sweep` traces accuracy against budget for the
policy, the oracle and every fixed head.

Exit codes are stable: 0 success, 2 usage or invalid generator spec,
3 unreadable/invalid data files, 4 infeasible budget, 5 policy/bank
mismatch, 6 cost resolution too coarse.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as eio
from .allocation import (
    DEFAULT_BETA,
    AllocationProblem,
    default_prior,
    solve_allocation,
)
from .calibration import build_policy
from .domain import BudgetSpec
from .errors import (
    BudgetBelowMinimum,
    EeroError,
    HeadCountMismatch,
    InfeasibleBudget,
    InvalidSpec,
    LabelLengthMismatch,
    MissingLabels,
    ResolutionTooCoarse,
    ScoreSpecMismatch,
)
from .inference import classify_batch, measure_budget
from .oracle import OracleInstance, build_correctness, oracle_curve, oracle_exact, oracle_greedy
from .scoring import SCORE_KINDS, DEFAULT_JITTER, ScoreSpec
from .synth import SynthSpec, generate

SEED_ENV = "EERO_SEED"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INFEASIBLE = 4
EXIT_MISMATCH = 5
EXIT_RESOLUTION = 6


def _resolve_seed(value: int | None, fallback: int = 0) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise InvalidSpec(f"{SEED_ENV}={env!r} is not an integer") from None
    return int(fallback)


def _load_synth_spec(path: Path, seed_flag: int | None) -> SynthSpec:
    try:
        raw = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise InvalidSpec(f"generator spec is not valid JSON: {e}")
    if not isinstance(doc, dict):
        raise InvalidSpec("generator spec must be a JSON object")
    known = {
        "seed",
        "num_classes",
        "num_heads",
        "head_accuracies",
        "head_budgets",
        "confidence_sharpness",
        "sizes",
    }
    unknown = set(doc) - known
    if unknown:
        raise InvalidSpec(f"unknown generator spec fields: {sorted(unknown)}")
    missing = known - {"seed"} - set(doc)
    if missing:
        raise InvalidSpec(f"generator spec is missing fields: {sorted(missing)}")
    seed = _resolve_seed(seed_flag, fallback=doc.get("seed", 0))
    try:
        return SynthSpec(
            seed=seed,
            num_classes=doc["num_classes"],
            num_heads=doc["num_heads"],
            head_accuracies=tuple(doc["head_accuracies"]),
            head_budgets=tuple(doc["head_budgets"]),
            confidence_sharpness=doc["confidence_sharpness"],
            sizes=tuple(doc["sizes"]),
        )
    except (TypeError, ValueError) as e:
        raise InvalidSpec(f"malformed generator spec: {e}") from None


def cmd_synth(args) -> int:
    spec = _load_synth_spec(Path(args.spec), args.seed)
    data = generate(spec)
    manifest = eio.write_dataset(data, args.out)
    sizes = spec.sizes
    print(
        f"wrote {manifest} ({spec.num_heads} heads, {spec.num_classes} classes; "
        f"train/calib/test = {sizes[0]}/{sizes[1]}/{sizes[2]})"
    )
    return EXIT_OK


def _risks_for(dataset: eio.Dataset) -> np.ndarray:
    train = dataset.split("train")
    declared = train.bank.risks
    if declared is not None:
        return declared
    return eio.compute_risks(train.bank, train.labels)


def cmd_calibrate(args) -> int:
    dataset = eio.load_manifest(args.data)
    calib = dataset.split("calib")
    risks = _risks_for(dataset)
    batch_size = args.batch_size
    if batch_size is None:
        if "test" not in dataset.splits:
            raise InvalidSpec("--batch-size is required when there is no test split")
        batch_size = dataset.split("test").bank.num_instances
    budget = BudgetSpec(total_budget=args.budget, batch_size=batch_size)
    budget.validate_for(calib.bank)
    budgets = calib.bank.budgets
    problem = AllocationProblem(
        risks=risks,
        budgets=budgets,
        prior=default_prior(budgets),
        beta=args.beta,
        mean_budget=budget.mean_budget,
    )
    allocation = solve_allocation(problem)
    spec = ScoreSpec(kind=args.score, jitter_u=args.jitter, seed=_resolve_seed(args.seed))
    policy = build_policy(calib.bank, allocation, spec)
    eio.save_policy(args.out, policy, allocation, budget)

    print("head  risk    prior   epsilon")
    for i in range(len(budgets)):
        print(
            f"{i + 1:<5d} {risks[i]:<7.4f} {problem.prior[i]:<7.4f} "
            f"{allocation.epsilons[i]:.4f}"
        )
    state = "saturated" if allocation.saturated else "slack"
    print(
        f"expected budget/instance {allocation.expected_budget:.6g} "
        f"(cap {budget.mean_budget:.6g}, multiplier {allocation.multiplier:.6g}, {state})"
    )
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    dataset = eio.load_manifest(args.data)
    test = dataset.split("test")
    policy, doc = eio.load_policy(args.policy)
    result = classify_batch(test.bank, policy, labels=test.labels)
    report = None
    if "budget_spec" in doc:
        stored = doc["budget_spec"]
        per_instance = float(stored["total_budget"]) / int(stored["batch_size"])
        report = measure_budget(
            result,
            BudgetSpec(
                total_budget=per_instance * result.batch_size,
                batch_size=result.batch_size,
            ),
        )
    eio.write_json_result(args.out, eio.batch_result_to_dict(result, report))
    if args.per_instance:
        eio.write_per_instance_csv(
            args.per_instance, result, labels=test.labels, instance_ids=test.instance_ids
        )
    if report is not None:
        flag = "within" if report.within_budget else "OVER"
        print(
            f"consumed {report.consumed_budget:.6g} of {report.allowed_budget:.6g} "
            f"({100 * report.utilization:.2f}%, {flag} budget)"
        )
    else:
        print(f"consumed {result.consumed_budget:.6g}")
    if result.accuracy is not None:
        print(f"accuracy {result.accuracy:.4f}")
    shares = " ".join(f"{p:.4f}" for p in result.exit_proportions)
    print(f"exit proportions {shares}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    dataset = eio.load_manifest(args.data)
    test = dataset.split("test")
    if test.labels is None:
        raise MissingLabels("the oracle needs a labeled test split")
    mode = "exact_budget" if args.mode == "exact" else "at_most_budget"
    correctness = build_correctness(test.bank, test.labels)
    instance = OracleInstance(
        correctness=correctness,
        costs=test.bank.budgets,
        budget=args.budget,
        mode=mode,
    )
    result = oracle_greedy(instance) if args.fast else oracle_exact(instance, args.resolution)
    eio.write_json_result(args.out, eio.oracle_result_to_dict(result, mode, args.budget))
    kind = "greedy" if args.fast else "exact"
    print(
        f"{kind} oracle: accuracy {result.accuracy:.4f} at cost {result.cost:.6g} "
        f"(budget {args.budget:.6g})"
    )
    print(f"wrote {args.out}")
    return EXIT_OK


def _parse_budgets(text: str) -> list[float]:
    if text.startswith("linspace:"):
        parts = text.split(":")
        if len(parts) != 4:
            raise InvalidSpec("--budgets linspace form is linspace:lo:hi:n")
        try:
            lo, hi, n = float(parts[1]), float(parts[2]), int(parts[3])
        except ValueError:
            raise InvalidSpec(f"malformed --budgets {text!r}") from None
        if n < 2 or hi <= lo:
            raise InvalidSpec("--budgets linspace needs hi > lo and n >= 2")
        return [float(b) for b in np.linspace(lo, hi, n)]
    try:
        budgets = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise InvalidSpec(f"malformed --budgets {text!r}") from None
    if not budgets:
        raise InvalidSpec("--budgets must name at least one budget")
    return budgets


def cmd_sweep(args) -> int:
    dataset = eio.load_manifest(args.data)
    calib = dataset.split("calib")
    test = dataset.split("test")
    if test.labels is None:
        raise MissingLabels("a sweep needs a labeled test split")
    risks = _risks_for(dataset)
    budgets_vec = calib.bank.budgets
    prior = default_prior(budgets_vec)
    t = test.bank.num_instances
    budgets = _parse_budgets(args.budgets)
    seed = _resolve_seed(args.seed)
    spec = ScoreSpec(kind=args.score, jitter_u=args.jitter, seed=seed)

    def eero_point(total: float):
        bspec = BudgetSpec(total_budget=total, batch_size=t)
        bspec.validate_for(calib.bank)
        problem = AllocationProblem(
            risks=risks,
            budgets=budgets_vec,
            prior=prior,
            beta=args.beta,
            mean_budget=bspec.mean_budget,
        )
        allocation = solve_allocation(problem)
        policy = build_policy(calib.bank, allocation, spec)
        result = classify_batch(test.bank, policy, labels=test.labels)
        return {
            "budget": total,
            "accuracy": result.accuracy,
            "consumed": result.consumed_budget,
            "within_budget": result.consumed_budget <= total,
            "source": "eero",
        }

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            eero_rows = list(pool.map(eero_point, budgets))
    else:
        eero_rows = [eero_point(b) for b in budgets]

    correctness = build_correctness(test.bank, test.labels)
    oracle_points = oracle_curve(correctness, test.bank.budgets, np.asarray(budgets))

    head_accuracy = correctness.mean(axis=0)
    head_cost = test.bank.budgets * t

    rows = []
    for j, total in enumerate(budgets):
        rows.append(eero_rows[j])
        acc, consumed = oracle_points[j]
        rows.append(
            {
                "budget": total,
                "accuracy": acc,
                "consumed": consumed,
                "within_budget": consumed <= total,
                "source": "oracle",
            }
        )
        for head in range(test.bank.num_heads):
            rows.append(
                {
                    "budget": total,
                    "accuracy": float(head_accuracy[head]),
                    "consumed": float(head_cost[head]),
                    "within_budget": float(head_cost[head]) <= total,
                    "source": f"head_{head + 1}",
                }
            )
    eio.write_sweep_csv(args.out, rows)
    print(f"wrote {args.out} ({len(rows)} rows over {len(budgets)} budgets)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eero",
        description=(
            "Budgeted batch classification via early exit with a reject "
            "option: calibrate per-head exit thresholds on held-out data, "
            "route batches under a compute budget, and compare against the "
            "offline oracle."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="generator spec JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None, help=f"overrides spec seed / ${SEED_ENV}")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="fit an exit policy for a budget")
    p.add_argument("--data", required=True, help="dataset directory or manifest path")
    p.add_argument("--budget", type=float, required=True, help="total batch budget")
    p.add_argument(
        "--batch-size",
        type=int,
        default=None,
        help="batch size the budget refers to (default: test split size)",
    )
    p.add_argument("--beta", type=float, default=DEFAULT_BETA, help="KL temperature")
    p.add_argument("--score", choices=SCORE_KINDS, default="breaking_ties")
    p.add_argument("--jitter", type=float, default=DEFAULT_JITTER, help="jitter width")
    p.add_argument("--seed", type=int, default=None, help=f"jitter seed (or ${SEED_ENV})")
    p.add_argument("--out", required=True, help="policy JSON path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("infer", help="route a test split through a policy")
    p.add_argument("--data", required=True)
    p.add_argument("--policy", required=True, help="policy JSON from calibrate")
    p.add_argument("--out", required=True, help="result JSON path")
    p.add_argument("--per-instance", default=None, help="optional per-instance CSV")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("oracle", help="offline optimal assignment under a budget")
    p.add_argument("--data", required=True)
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--mode", choices=("at-most", "exact"), default="at-most")
    p.add_argument("--fast", action="store_true", help="greedy baseline instead of DP")
    p.add_argument("--resolution", type=float, default=None, help="cost unit override")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("sweep", help="accuracy vs budget for policy, oracle, heads")
    p.add_argument("--data", required=True)
    p.add_argument(
        "--budgets",
        required=True,
        help="comma-separated totals or linspace:lo:hi:n",
    )
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.add_argument("--score", choices=SCORE_KINDS, default="breaking_ties")
    p.add_argument("--jitter", type=float, default=DEFAULT_JITTER)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1, help="parallel budget workers")
    p.add_argument("--out", required=True, help="sweep CSV path")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidSpec as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleBudget, BudgetBelowMinimum) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (HeadCountMismatch, ScoreSpecMismatch, LabelLengthMismatch) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except ResolutionTooCoarse as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RESOLUTION
    except (EeroError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
