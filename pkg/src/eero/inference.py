"""Routing batches through a calibrated exit policy.

An instance walks the heads in order and leaves at the first head whose
jittered confidence score is at or above that head's threshold; the
final head's rate is 1 so nothing survives past it.  The instance is
charged the exit head's cumulative budget and nothing else: costs of
the heads it merely passed through are already inside that cumulative
number, and heads it never reached cost nothing.

`classify_batch` evaluates all heads vectorized and scans precomputed
scores, which is semantically identical to the lazy per-head loop that
`iter_classify` keeps for streaming use.  Scores are counter-based, so
both paths (and any parallel split of the batch) produce bit-identical
results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import BatchResult, BudgetSpec, ExitPolicy, HeadBank, _set
from .errors import HeadCountMismatch, LabelLengthMismatch, ScoreSpecMismatch
from .scoring import (
    TEST_KEY_BASE,
    ScoreSpec,
    head_predict,
    head_score,
    jitter_matrix,
    jitter_row,
    predict_matrix,
    score_matrix,
)


def _resolve_spec(policy: ExitPolicy, spec: ScoreSpec | None) -> ScoreSpec:
    pinned = ScoreSpec(kind=policy.score_kind, jitter_u=policy.jitter_u, seed=policy.seed)
    if spec is None:
        return pinned
    if spec != pinned:
        raise ScoreSpecMismatch(
            f"scoring config {spec} differs from the calibrated one {pinned}"
        )
    return pinned


def classify_batch(
    bank: HeadBank,
    policy: ExitPolicy,
    spec: ScoreSpec | None = None,
    labels: np.ndarray | None = None,
) -> BatchResult:
    """Route every instance of a test bank and aggregate the outcome.

    `labels` (0-based classes) are optional; when present the result
    carries batch accuracy.  Omitting `spec` uses the scoring
    configuration pinned inside the policy, which is always correct;
    passing one asserts it matches.
    """
    if policy.num_heads != bank.num_heads:
        raise HeadCountMismatch(
            f"policy built for {policy.num_heads} heads, bank has {bank.num_heads}"
        )
    spec = _resolve_spec(policy, spec)
    n = bank.num_instances
    m = bank.num_heads
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise LabelLengthMismatch(
                f"{labels.shape[0] if labels.ndim else 'scalar'} labels for {n} instances"
            )

    keys = TEST_KEY_BASE + np.arange(n, dtype=np.uint64)
    scores = np.empty((n, m), dtype=np.float64)
    preds = np.empty((n, m), dtype=np.int64)
    for head in range(m):
        jittered = jitter_matrix(bank.heads[head].probs, head, keys, spec)
        scores[:, head] = score_matrix(jittered, spec.kind)
        preds[:, head] = predict_matrix(jittered)

    classify = scores >= policy.thresholds[None, :]
    classify[:, m - 1] = True  # final head takes whatever remains
    exit_head = np.argmax(classify, axis=1)  # first head clearing its threshold

    rows = np.arange(n)
    chosen = preds[rows, exit_head]
    costs = bank.budgets[exit_head]
    proportions = np.bincount(exit_head, minlength=m).astype(np.float64) / n
    accuracy = None if labels is None else float(np.mean(chosen == labels))
    return BatchResult(
        exits=exit_head + 1,
        predictions=chosen + 1,
        per_instance_cost=costs,
        consumed_budget=float(costs.sum()),
        exit_proportions=proportions,
        accuracy=accuracy,
    )


def iter_classify(bank: HeadBank, policy: ExitPolicy, spec: ScoreSpec | None = None):
    """Lazy per-instance routing; yields (exit_head, prediction, cost).

    Head and class indices are 1-based, matching `BatchResult`.  Later
    heads of an instance are never scored once it exits, which is the
    behaviour wanted when head outputs are produced on demand.
    """
    if policy.num_heads != bank.num_heads:
        raise HeadCountMismatch(
            f"policy built for {policy.num_heads} heads, bank has {bank.num_heads}"
        )
    spec = _resolve_spec(policy, spec)
    m = bank.num_heads
    for i in range(bank.num_instances):
        key = TEST_KEY_BASE + i
        for head in range(m):
            row = jitter_row(bank.heads[head].probs[i], head, key, spec)
            last = head == m - 1
            if last or head_score(row, spec.kind) >= policy.thresholds[head]:
                yield head + 1, head_predict(row) + 1, bank.heads[head].budget_gflops
                break


@dataclass(frozen=True)
class BudgetReport:
    """Consumed-versus-allowed accounting for one routed batch."""

    consumed_budget: float
    allowed_budget: float
    utilization: float
    within_budget: bool

    def __post_init__(self):
        _set(self, "consumed_budget", float(self.consumed_budget))
        _set(self, "allowed_budget", float(self.allowed_budget))
        _set(self, "utilization", float(self.utilization))
        _set(self, "within_budget", bool(self.within_budget))


def measure_budget(result: BatchResult, budget: BudgetSpec) -> BudgetReport:
    """Compare a batch's consumption against its allowance."""
    allowed = budget.mean_budget * result.batch_size
    consumed = result.consumed_budget
    return BudgetReport(
        consumed_budget=consumed,
        allowed_budget=allowed,
        utilization=consumed / allowed,
        within_budget=consumed <= allowed,
    )
