"""Ordinal classification under non-parametric unimodality constraints.

Training losses that push posterior distributions to decrease monotonically
on both sides of the target label (quadratic penalty and extended log-barrier
formulations), five comparison losses, the sides-order consistency metric,
and a small reproducible experiment harness.
"""

__version__ = "0.1.0"

from .ordinal import LabelSpace, adjacent_diff, predict_argmax, predict_expectation, softmax

__all__ = [
    "LabelSpace",
    "adjacent_diff",
    "predict_argmax",
    "predict_expectation",
    "softmax",
    "__version__",
]
