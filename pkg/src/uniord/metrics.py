"""Evaluation metrics: MAE, the sides-order index (SOI), and per-pair
violation diagnostics.

SOI_nu scores how unimodal a posterior is about a reference label nu: the
fraction of the c-1 adjacent pairs that are strictly increasing below nu
and strictly decreasing at or above it. Ties count as violations, so a
uniform posterior scores 0. SOI over a dataset is reported with nu taken
per sample from either the argmax prediction (SOI_yhat) or the true label
(SOI_y).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def mae(predictions, truths) -> float:
    """Mean absolute difference between predicted and true labels."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.shape[0] == 0:
        raise ValueError("mae of an empty set")
    return float(np.mean(np.abs(p - t)))


def soi(p, nu: int) -> float:
    """Fraction of adjacent pairs correctly ordered about nu.

    Pair j compares p_j, p_{j+1}: below nu (j < nu) the order must be
    strictly increasing, from nu on strictly decreasing. Monotone in each
    coordinate pair, so scores and their softmax give the same value.
    """
    p = np.asarray(p, dtype=np.float64)
    c = p.shape[0]
    if c < 2:
        raise ValueError(f"need at least 2 entries, got {c}")
    if not 1 <= nu <= c:
        raise ValueError(f"reference label {nu} outside 1..{c}")
    d = np.diff(p)  # d[j] = p_{j+2} - p_{j+1} in 1-based terms
    sat = np.count_nonzero(d[: nu - 1] > 0.0) + np.count_nonzero(d[nu - 1 :] < 0.0)
    return sat / (c - 1)


def soi_dataset(posteriors, nus) -> float:
    """Mean per-sample SOI with an explicit reference label per sample."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim != 2 or posteriors.shape[0] == 0:
        raise ValueError("need a nonempty n x c posterior matrix")
    nus = np.asarray(nus)
    if nus.shape != (posteriors.shape[0],):
        raise ValueError("one reference label per sample required")
    return float(np.mean([soi(p, int(v)) for p, v in zip(posteriors, nus)]))


def violation_histogram(posteriors, nus) -> np.ndarray:
    """Count, per adjacent pair index, how many samples violate the order
    required by their own reference label."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim != 2 or posteriors.shape[0] == 0:
        raise ValueError("need a nonempty n x c posterior matrix")
    c = posteriors.shape[1]
    hist = np.zeros(c - 1, dtype=np.int64)
    for p, v in zip(posteriors, np.asarray(nus)):
        nu = int(v)
        if not 1 <= nu <= c:
            raise ValueError(f"reference label {nu} outside 1..{c}")
        d = np.diff(p)
        hist[: nu - 1] += d[: nu - 1] <= 0.0
        hist[nu - 1 :] += d[nu - 1 :] >= 0.0
    return hist


@dataclass
class MetricsReport:
    """One evaluation pass over a dataset: MAE of the decision rule, SOI
    about the argmax prediction and about the true label, and the per-pair
    violation counts (argmax reference)."""

    mae: float
    soi_predicted: float
    soi_true: float
    violation_histogram: list[int] = field(default_factory=list)
    n_samples: int = 0

    def __post_init__(self):
        if self.mae < 0:
            raise ValueError(f"mae must be >= 0, got {self.mae}")
        for name in ("soi_predicted", "soi_true"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0,1], got {v}")
        if any(h > self.n_samples or h < 0 for h in self.violation_histogram):
            raise ValueError("violation counts cannot exceed sample count")

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "soi_predicted": self.soi_predicted,
            "soi_true": self.soi_true,
            "violation_histogram": [int(h) for h in self.violation_histogram],
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            mae=float(d["mae"]),
            soi_predicted=float(d["soi_predicted"]),
            soi_true=float(d["soi_true"]),
            violation_histogram=[int(h) for h in d["violation_histogram"]],
            n_samples=int(d["n_samples"]),
        )
