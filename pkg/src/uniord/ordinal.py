"""Ordered label sets, score/posterior transforms, and prediction rules.

Labels are 1-based everywhere: the label set for `c` classes is {1, ..., c}
with 1 < 2 < ... < c and exactly c-1 adjacent pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class LabelSpace:
    """The ordered label set {1..c}."""

    c: int

    def __post_init__(self):
        if self.c < 2:
            raise ValueError(f"label space needs c >= 2, got {self.c}")

    @property
    def labels(self) -> range:
        return range(1, self.c + 1)

    @property
    def n_adjacent_pairs(self) -> int:
        return self.c - 1

    def validate_label(self, y: int) -> int:
        y = int(y)
        if not 1 <= y <= self.c:
            raise ValueError(f"label {y} outside 1..{self.c}")
        return y


def softmax(s: np.ndarray) -> np.ndarray:
    """Posterior from logit scores, stabilized by max subtraction."""
    s = np.asarray(s, dtype=np.float64)
    e = np.exp(s - np.max(s))
    return e / np.sum(e)


def adjacent_diff(v, direction: str = "l2r"):
    """Differences of adjacent entries, the fixed [+1, -1] slide.

    "l2r" gives out_k = v_k - v_{k+1}; "r2l" is its negation. Accepts a
    plain vector or a DiffValue.
    """
    if direction not in ("l2r", "r2l"):
        raise ValueError(f"direction must be 'l2r' or 'r2l', got {direction!r}")
    if isinstance(v, ad.DiffValue):
        d = ad.slide_diff(v)
        return ad.neg(d) if direction == "r2l" else d
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] < 2:
        raise ValueError("adjacent_diff needs at least 2 entries")
    d = v[:-1] - v[1:]
    return -d if direction == "r2l" else d


def predict_argmax(p: np.ndarray) -> int:
    """Label with maximal probability; ties go to the smallest label."""
    p = np.asarray(p, dtype=np.float64)
    return int(np.argmax(p)) + 1


def predict_expectation(p: np.ndarray) -> int:
    """Rounded expected label, clamped into {1..c}.

    Rounds half away from zero so .5 never flips toward an even neighbour.
    """
    p = np.asarray(p, dtype=np.float64)
    c = p.shape[0]
    m = float(np.arange(1, c + 1) @ p)
    r = math.floor(m + 0.5) if m >= 0 else math.ceil(m - 0.5)
    return min(max(r, 1), c)
