"""Budgeted batch classification via early exit with a reject option.

A bank of classifier heads of increasing cost scores each instance;
an instance exits at the first head whose confidence clears that
head's calibrated threshold, otherwise it is rejected onward to the
next head. Thresholds are fit on a held-out split so that the batch
as a whole stays inside a total compute budget.
"""

from .allocation import (
    DEFAULT_BETA,
    AllocationProblem,
    allocation_objective,
    default_prior,
    gibbs_epsilons,
    single_head_rate,
    solve_allocation,
)
from .calibration import (
    CORRECTION_MODES,
    ScoreCdf,
    build_cdf,
    build_policy,
    cdf_eval,
    sequential_rates,
    threshold_for_rate,
)
from .domain import (
    AllocationResult,
    BatchResult,
    BudgetSpec,
    ExitPolicy,
    HeadBank,
    HeadSlice,
    validate_head_bank,
)
from .errors import (
    BudgetBelowMinimum,
    EeroError,
    EmptyCalibration,
    EqualBudgets,
    HeadCountMismatch,
    InfeasibleBudget,
    InvalidSpec,
    LabelLengthMismatch,
    MissingLabels,
    NonIncreasingBudgets,
    NotOnSimplex,
    ParseError,
    ResolutionTooCoarse,
    RowNotNormalized,
    ScoreSpecMismatch,
    ShapeMismatch,
)
from .inference import BudgetReport, classify_batch, iter_classify, measure_budget
from .io import (
    Dataset,
    Split,
    as_dataset,
    compute_risks,
    load_manifest,
    load_policy,
    save_policy,
    write_dataset,
)
from .oracle import (
    ORACLE_MODES,
    OracleInstance,
    OracleResult,
    build_correctness,
    oracle_curve,
    oracle_exact,
    oracle_greedy,
    scale_costs,
)
from .scoring import (
    DEFAULT_JITTER,
    SCORE_KINDS,
    ScoreSpec,
    head_predict,
    head_score,
    jitter_matrix,
    jitter_row,
    predict_matrix,
    score_matrix,
)
from .synth import SynthData, SynthSpec, default_spec, generate

__version__ = "0.1.0"

__all__ = [
    "AllocationProblem",
    "AllocationResult",
    "BatchResult",
    "BudgetBelowMinimum",
    "BudgetReport",
    "BudgetSpec",
    "CORRECTION_MODES",
    "DEFAULT_BETA",
    "DEFAULT_JITTER",
    "Dataset",
    "Split",
    "EeroError",
    "EmptyCalibration",
    "EqualBudgets",
    "ExitPolicy",
    "HeadBank",
    "HeadCountMismatch",
    "HeadSlice",
    "InfeasibleBudget",
    "InvalidSpec",
    "LabelLengthMismatch",
    "MissingLabels",
    "NonIncreasingBudgets",
    "NotOnSimplex",
    "ORACLE_MODES",
    "OracleInstance",
    "OracleResult",
    "ParseError",
    "ResolutionTooCoarse",
    "RowNotNormalized",
    "SCORE_KINDS",
    "ScoreCdf",
    "ScoreSpec",
    "ScoreSpecMismatch",
    "ShapeMismatch",
    "SynthData",
    "SynthSpec",
    "allocation_objective",
    "as_dataset",
    "build_cdf",
    "build_correctness",
    "build_policy",
    "cdf_eval",
    "classify_batch",
    "compute_risks",
    "default_prior",
    "default_spec",
    "generate",
    "gibbs_epsilons",
    "head_predict",
    "head_score",
    "iter_classify",
    "jitter_matrix",
    "jitter_row",
    "load_manifest",
    "load_policy",
    "measure_budget",
    "oracle_curve",
    "oracle_exact",
    "oracle_greedy",
    "predict_matrix",
    "save_policy",
    "scale_costs",
    "score_matrix",
    "sequential_rates",
    "single_head_rate",
    "solve_allocation",
    "threshold_for_rate",
    "validate_head_bank",
    "write_dataset",
]
