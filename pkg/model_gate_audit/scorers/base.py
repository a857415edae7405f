from typing import Protocol

import numpy as np

from model_gate_audit.cohort import FeatureMatrix
from model_gate_audit.errors import RangeError


class Scorer(Protocol):
    """Anything that maps a feature matrix to probabilities in [0, 1].

    Implementations must be pure: scoring the same matrix twice returns the
    same vector.
    """

    @property
    def descriptor(self) -> str:
        ...

    def score(self, X: FeatureMatrix) -> np.ndarray:
        ...


def checked_scores(values: np.ndarray, n: int, source: str) -> np.ndarray:
    scores = np.asarray(values, dtype=float)
    if scores.shape != (n,):
        raise RangeError(f"{source} returned shape {scores.shape}, expected ({n},)")
    if not np.all(np.isfinite(scores)) or np.any(scores < 0.0) or np.any(scores > 1.0):
        raise RangeError(f"{source} returned scores outside [0, 1]")
    return scores
