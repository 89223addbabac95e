from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# logit/probability index of each class in every model of this package
P_INDEX = 0
N_INDEX = 1


@dataclass(frozen=True)
class Prediction:
    prob_p: float
    prob_n: float

    def __post_init__(self):
        if not (0.0 <= self.prob_p <= 1.0 and 0.0 <= self.prob_n <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if not math.isclose(self.prob_p + self.prob_n, 1.0, abs_tol=1e-9):
            raise ValueError("probabilities must sum to 1")

    @property
    def label(self) -> str:
        # ties go to P: a missed crack costs more than a second look
        return "P" if self.prob_p >= self.prob_n else "N"

    @classmethod
    def from_probs(cls, probs) -> "Prediction":
        p = float(probs[P_INDEX])
        return cls(p, 1.0 - p)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
