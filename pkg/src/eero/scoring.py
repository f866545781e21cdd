"""Confidence scores over jittered probability rows.

Scores drive the exit decision: an instance leaves at the first head
whose score clears that head's calibrated threshold.  A tiny additive
uniform jitter makes the score distribution atomless, so empirical
quantiles behave as if scores were continuous and exact ties cannot
produce ambiguous thresholds.

Jitter draws are counter-based, keyed by (seed, head, instance, class):
the same row always receives the same perturbation no matter how the
batch is chunked or parallelized.  Calibration and test rows use
disjoint instance-key ranges so the two score samples never share
jitter draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng

SCORE_KINDS = ("max_prob", "breaking_ties", "neg_entropy")

DEFAULT_JITTER = 1e-5
ENTROPY_FLOOR = 1e-12

# leading hash word separating jitter draws from other streams
JITTER_DOMAIN = 0x4A49
# instance-key bases: calibration rows count from 0, test rows from 2**32
CALIBRATION_KEY_BASE = 0
TEST_KEY_BASE = 1 << 32


@dataclass(frozen=True)
class ScoreSpec:
    """Scoring configuration: score kind, jitter width and jitter seed."""

    kind: str = "breaking_ties"
    jitter_u: float = DEFAULT_JITTER
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ValueError(
                f"unknown score kind {self.kind!r}, expected one of {SCORE_KINDS}"
            )
        if not (float(self.jitter_u) >= 0.0):
            raise ValueError(f"jitter width must be >= 0, got {self.jitter_u}")
        object.__setattr__(self, "jitter_u", float(self.jitter_u))
        object.__setattr__(self, "seed", int(self.seed))


def jitter_matrix(
    probs: np.ndarray, head: int, instance_keys: np.ndarray, spec: ScoreSpec
) -> np.ndarray:
    """Add per-entry uniform jitter on [0, jitter_u) to probability rows.

    `instance_keys` are the global jitter keys of the rows (calibration
    and test splits pass keys from disjoint ranges).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("jitter_matrix expects a (n, K) matrix")
    if spec.jitter_u == 0.0:
        return probs.copy()
    keys = np.asarray(instance_keys, dtype=np.uint64)[:, None]
    classes = np.arange(probs.shape[1], dtype=np.uint64)[None, :]
    u = rng.uniform(spec.seed, JITTER_DOMAIN, head, keys, classes)
    return probs + spec.jitter_u * u


def jitter_row(
    probs: np.ndarray, head: int, instance: int, spec: ScoreSpec
) -> np.ndarray:
    """Row form of `jitter_matrix`; identical draws for identical keys."""
    row = np.asarray(probs, dtype=np.float64)
    if row.ndim != 1:
        raise ValueError("jitter_row expects a K-vector")
    return jitter_matrix(row[None, :], head, np.array([instance]), spec)[0]


def score_matrix(jittered: np.ndarray, kind: str) -> np.ndarray:
    """Per-row confidence score; higher always means more confident."""
    q = np.asarray(jittered, dtype=np.float64)
    if q.ndim != 2:
        raise ValueError("score_matrix expects a (n, K) matrix")
    if kind == "max_prob":
        return q.max(axis=1)
    if kind == "breaking_ties":
        top2 = np.partition(q, q.shape[1] - 2, axis=1)[:, -2:]
        return top2[:, 1] - top2[:, 0]
    if kind == "neg_entropy":
        c = np.maximum(q, ENTROPY_FLOOR)
        return np.sum(c * np.log(c), axis=1)
    raise ValueError(f"unknown score kind {kind!r}")


def head_score(jittered: np.ndarray, kind: str) -> float:
    """Confidence score of one (jittered) probability row."""
    return float(score_matrix(np.asarray(jittered)[None, :], kind)[0])


def predict_matrix(jittered: np.ndarray) -> np.ndarray:
    """Per-row argmax class (0-based); ties go to the lowest index."""
    return np.argmax(np.asarray(jittered), axis=1)


def head_predict(jittered: np.ndarray) -> int:
    """Argmax class (0-based) of one row; ties go to the lowest index."""
    return int(np.argmax(np.asarray(jittered)))
