"""Counter-based random streams.

Each value is a pure function of (seed, key words): there is no hidden
state, so draws are identical under any call order, chunking or worker
count.  Streams for unrelated purposes are separated by a leading
domain word chosen by the caller.

The generator is the splitmix64 finalizer folded over the key words;
its output passes the usual avalanche checks and is more than enough
for tie-breaking jitter and synthetic data.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_MASK = 0xFFFFFFFFFFFFFFFF
_INV_U53 = 2.0**-53


def _finalize(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX_A
    z = (z ^ (z >> np.uint64(27))) * _MIX_B
    return z ^ (z >> np.uint64(31))


def hash_words(seed: int, *words) -> np.ndarray:
    """Fold integer key words into one uint64 hash per broadcast element.

    `words` may be scalars or integer arrays; they broadcast against each
    other and the result has the broadcast shape (0-d for all scalars).
    """
    with np.errstate(over="ignore"):
        h = _finalize(np.asarray(np.uint64(seed & _MASK)) + _GOLDEN)
        for w in words:
            w64 = np.asarray(w).astype(np.uint64)
            h = _finalize((h ^ w64) + _GOLDEN)
    return h


def uniform(seed: int, *words) -> np.ndarray:
    """Deterministic uniforms on [0, 1), one per broadcast element."""
    bits = hash_words(seed, *words) >> np.uint64(11)
    return bits.astype(np.float64) * _INV_U53


def normal(seed: int, *words) -> np.ndarray:
    """Deterministic standard normals via the inverse CDF.

    The underlying uniform is shifted into the open interval (0, 1) so
    the quantile function never returns an infinity.
    """
    bits = hash_words(seed, *words) >> np.uint64(11)
    u = (bits.astype(np.float64) + 0.5) * _INV_U53
    return ndtri(u)
