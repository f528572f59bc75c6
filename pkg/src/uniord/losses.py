"""Training losses for order-consistent ordinal classification.

Seven interchangeable objectives over a length-c score vector (or, for the
Poisson head, a single positive rate):

* CE   -- plain cross-entropy, no order prior.
* PN   -- CE plus quadratic penalties on violated adjacent-order constraints.
* ELB  -- CE plus an extended log-barrier on the same constraints; the
          barrier stays active inside the feasible region, so constraints
          keep being pushed instead of merely repaired. Sharpness grows with
          a temperature t raised every epoch.
* REN  -- mean squared error against a cumulative binary re-encoding.
* LD   -- divergence from a Gaussian soft label distribution.
* MV   -- CE plus mean and variance regularizers of the posterior.
* PO   -- Poisson-shaped posterior hard-wired from one positive rate.

For a sample with label y there are exactly c-1 adjacent-order constraints:
s_k < s_{k+1} for the y-1 pairs below y, and s_{k+1} < s_k for the c-y pairs
at or above it. `constraint_margins` packs them as a vector that must be
elementwise negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue, DomainError
from .ordinal import predict_argmax, predict_expectation, softmax


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PenaltyConfig:
    """Quadratic-penalty weight and slack. lam balances all penalties
    against the classification loss; eps keeps the boundary case strictly
    penalized."""

    lam: float = 1e-2
    eps: float = 1e-1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"penalty weight must be >= 0, got {self.lam}")
        if self.eps <= 0:
            raise ValueError(f"slack must be > 0, got {self.eps}")


@dataclass
class BarrierSchedule:
    """Barrier temperature, raised by a constant factor once per epoch up
    to a cap. Defaults: start at 1, grow by 1.001, cap at 5."""

    t_init: float = 1.0
    growth: float = 1.001
    t_max: float = 5.0
    t: float | None = None

    def __post_init__(self):
        if self.t_init <= 0:
            raise ValueError(f"t_init must be > 0, got {self.t_init}")
        if self.growth < 1:
            raise ValueError(f"growth factor must be >= 1, got {self.growth}")
        if self.t_max < self.t_init:
            raise ValueError(f"t_max {self.t_max} below t_init {self.t_init}")
        if self.t is None:
            self.t = self.t_init
        elif not self.t_init <= self.t <= self.t_max:
            raise ValueError(f"t {self.t} outside [{self.t_init}, {self.t_max}]")

    def step(self) -> "BarrierSchedule":
        """Advance one epoch: t <- min(t * growth, t_max)."""
        self.t = min(self.t * self.growth, self.t_max)
        return self


@dataclass
class LDConfig:
    """Width of the Gaussian soft target over label indices."""

    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


@dataclass
class MVConfig:
    """Weights of the posterior-mean and posterior-variance terms."""

    lambda1: float = 0.2
    lambda2: float = 0.05

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("mean/variance weights must be >= 0")


@dataclass
class POConfig:
    """Softmax temperature for the Poisson-shaped posterior."""

    tau: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")


# ---------------------------------------------------------------------------
# adjacent-order constraint wiring


def constraint_signs(c: int, y: int) -> np.ndarray:
    """Signs turning the left-to-right slide into constraint margins.

    Entry k of slide_diff(s) is s_k - s_{k+1}. The y-1 pairs below the
    label keep it (+1: want s_k < s_{k+1}); the c-y pairs above flip it
    (-1: want s_{k+1} < s_k). Every margin must come out negative.
    """
    if not 1 <= y <= c:
        raise ValueError(f"label {y} outside 1..{c}")
    w = np.ones(c - 1)
    w[y - 1 :] = -1.0
    return w


def constraint_margins(s: DiffValue, y: int) -> DiffValue:
    """Length-(c-1) vector of constraint margins for a sample with label y."""
    c = s.shape[0]
    return ad.mul(ad.slide_diff(s), constraint_signs(c, y))


# ---------------------------------------------------------------------------
# the two constrained losses and their ingredients


def ce_loss(s: DiffValue, y: int) -> DiffValue:
    """-log softmax(s)_y via log-sum-exp."""
    c = s.shape[0]
    if not 1 <= y <= c:
        raise ValueError(f"label {y} outside 1..{c}")
    return ad.sub(ad.logsumexp(s), ad.pick(s, y - 1))


def _h_value(d, eps):
    if isinstance(d, float):
        return (d + eps) ** 2 if d >= 0.0 else 0.0
    out = np.zeros_like(d)
    m = d >= 0.0
    out[m] = (d[m] + eps) ** 2
    return out


def _h_deriv(d, eps):
    if isinstance(d, float):
        return 2.0 * (d + eps) if d >= 0.0 else 0.0
    out = np.zeros_like(d)
    m = d >= 0.0
    out[m] = 2.0 * (d[m] + eps)
    return out


def penalty_h(delta: DiffValue, eps: float) -> DiffValue:
    """Quadratic penalty (delta + eps)^2 where delta >= 0, else 0.

    Active exactly when the constraint delta < 0 is violated; the slack
    eps keeps the equality case from slipping through at zero cost.
    Elementwise on vectors.
    """
    if eps <= 0:
        raise ValueError(f"slack must be > 0, got {eps}")
    return ad.elementwise(delta, lambda v: _h_value(v, eps), lambda v: _h_deriv(v, eps))


def _psi_value(r, t):
    thr = -1.0 / (t * t)
    lin_c = -math.log(1.0 / (t * t)) / t + 1.0 / t
    if isinstance(r, float):
        return -math.log(-r) / t if r <= thr else t * r + lin_c
    out = np.empty_like(r)
    m = r <= thr
    out[m] = -np.log(-r[m]) / t
    out[~m] = t * r[~m] + lin_c
    return out


def _psi_deriv(r, t):
    thr = -1.0 / (t * t)
    if isinstance(r, float):
        return -1.0 / (t * r) if r <= thr else t
    out = np.full_like(r, t)
    m = r <= thr
    out[m] = -1.0 / (t * r[m])
    return out


def barrier_psi(r: DiffValue, t: float) -> DiffValue:
    """Extended log-barrier: -log(-r)/t for r <= -1/t^2, linear beyond.

    Convex, increasing, and C^1 at the switch, so optimization can start
    from infeasible points; larger t tightens the fit to the exact
    constraint indicator. Elementwise on vectors.
    """
    if t <= 0:
        raise ValueError(f"barrier temperature must be > 0, got {t}")
    return ad.elementwise(r, lambda v: _psi_value(v, t), lambda v: _psi_deriv(v, t))


def psi_value(r: float, t: float) -> float:
    """Plain-number barrier evaluation (no tape)."""
    if t <= 0:
        raise ValueError(f"barrier temperature must be > 0, got {t}")
    return _psi_value(float(r), t)


def pn_loss(s: DiffValue, y: int, cfg: PenaltyConfig) -> DiffValue:
    """CE plus lam * sum of quadratic penalties over all c-1 margins."""
    ce = ce_loss(s, y)
    pen = ad.vsum(penalty_h(constraint_margins(s, y), cfg.eps))
    return ad.add(ce, ad.mul(pen, cfg.lam))


def elb_loss(s: DiffValue, y: int, sched: BarrierSchedule) -> DiffValue:
    """CE plus the unweighted barrier sum over all c-1 margins at the
    schedule's current temperature."""
    ce = ce_loss(s, y)
    bar = ad.vsum(barrier_psi(constraint_margins(s, y), sched.t))
    return ad.add(ce, bar)


# ---------------------------------------------------------------------------
# comparison losses


def ren_targets(c: int, y: int) -> np.ndarray:
    """Cumulative binary encoding: 1 for every label index <= y."""
    t = np.zeros(c)
    t[:y] = 1.0
    return t


def ren_loss(o: DiffValue, y: int) -> DiffValue:
    """Mean squared error between squashed outputs and the cumulative
    encoding of y. `o` must already be in (0,1) per coordinate."""
    c = o.shape[0]
    if not 1 <= y <= c:
        raise ValueError(f"label {y} outside 1..{c}")
    diff = ad.sub(o, ren_targets(c, y))
    return ad.mul(ad.vsum(ad.square(diff)), 1.0 / c)


def ren_predict(o: np.ndarray, threshold: float = 0.5) -> int:
    """Count of outputs above threshold, floored at label 1."""
    return max(1, int(np.sum(np.asarray(o) > threshold)))


def gaussian_label_targets(c: int, y: int, sigma: float) -> np.ndarray:
    """Soft target q_k proportional to exp(-(k-y)^2 / (2 sigma^2))."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    k = np.arange(1, c + 1, dtype=np.float64)
    w = np.exp(-((k - y) ** 2) / (2.0 * sigma * sigma))
    return w / np.sum(w)


def ld_loss(s: DiffValue, y: int, cfg: LDConfig) -> DiffValue:
    """KL(q || softmax(s)) against the Gaussian soft target q.

    Includes the (constant) negative entropy of q so an exact match scores
    0 rather than an opaque offset.
    """
    c = s.shape[0]
    if not 1 <= y <= c:
        raise ValueError(f"label {y} outside 1..{c}")
    q = gaussian_label_targets(c, y, cfg.sigma)
    pos = q > 0.0
    neg_entropy = float(np.sum(q[pos] * np.log(q[pos])))
    cross = ad.sub(ad.logsumexp(s), ad.weighted_sum(s, q))
    return ad.add(cross, neg_entropy)


def mv_loss(s: DiffValue, y: int, cfg: MVConfig) -> DiffValue:
    """CE + lambda1 * (mean - y)^2 / 2 + lambda2 * variance of the
    posterior over label indices."""
    c = s.shape[0]
    if not 1 <= y <= c:
        raise ValueError(f"label {y} outside 1..{c}")
    lse = ad.logsumexp(s)
    ce = ad.sub(lse, ad.pick(s, y - 1))
    p = ad.exp(ad.sub(s, lse))
    k = np.arange(1, c + 1, dtype=np.float64)
    m = ad.weighted_sum(p, k)
    var = ad.vsum(ad.mul(p, ad.square(ad.sub(k, m))))
    mean_term = ad.mul(ad.square(ad.sub(m, float(y))), 0.5 * cfg.lambda1)
    return ad.add(ad.add(ce, mean_term), ad.mul(var, cfg.lambda2))


@lru_cache(maxsize=None)
def _po_consts(c: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(1, c + 1, dtype=np.float64)
    lgamma = np.array([math.lgamma(v + 1.0) for v in k])
    return k, lgamma


def _po_log_pmf(eta: float, c: int) -> np.ndarray:
    k, lgamma = _po_consts(c)
    return k * math.log(eta) - eta - lgamma


def po_distribution(eta: float, c: int, tau: float = 1.0) -> np.ndarray:
    """Posterior over {1..c} from a Poisson log-pmf in the rate eta,
    tempered by tau. Uses log-gamma, so large c stays finite."""
    if eta <= 0:
        raise DomainError(f"poisson rate must be > 0, got {eta}")
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    return softmax(_po_log_pmf(eta, c) / tau)


def po_loss(eta: DiffValue, y: int, c: int, tau: float = 1.0) -> DiffValue:
    """Cross-entropy of the tempered Poisson-shaped posterior at label y."""
    if not 1 <= y <= c:
        raise ValueError(f"label {y} outside 1..{c}")
    ev = eta.value
    if not isinstance(ev, float):
        raise ValueError("poisson rate must be a scalar")
    if ev <= 0:
        raise DomainError(f"poisson rate must be > 0, got {ev}")
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    k, lgamma = _po_consts(c)
    logits = ad.sub(ad.sub(ad.mul(ad.log(eta), k), eta), lgamma)
    scaled = ad.mul(logits, 1.0 / tau)
    return ad.sub(ad.logsumexp(scaled), ad.pick(scaled, y - 1))


def batch_reduce(per_sample: list[DiffValue]) -> DiffValue:
    """Arithmetic mean of per-sample losses."""
    return ad.mean_of(per_sample)


# ---------------------------------------------------------------------------
# one uniform handle per loss kind for the trainer


LOSS_KINDS = ("CE", "PN", "ELB", "REN", "LD", "MV", "PO")


def head_for(kind: str) -> str:
    """Model head a loss kind trains against."""
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
    return "poisson" if kind == "PO" else "logits"


def _sigmoid_np(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class LossBundle:
    """Everything the trainer needs for one loss kind: which model head to
    build, the differentiable per-sample loss, and how to turn a raw model
    output into a posterior and a predicted label.

    `soi_vector` picks the vector order metrics are computed on. For
    logits heads that is the raw score vector: it has the same coordinate
    order as any strictly monotone posterior map (softmax, normalized
    sigmoids), but stays informative where those maps saturate — softmax
    of scores spanning more than ~750 underflows its tail to exact zeros,
    and tied zeros would read as order violations. The Poisson head has no
    score vector, so its posterior is used directly."""

    kind: str
    head: str
    loss: Callable[[DiffValue, int], DiffValue]
    posterior: Callable[[np.ndarray | float], np.ndarray]
    predict: Callable[[np.ndarray | float], int]
    soi_vector: Callable[[np.ndarray | float], np.ndarray] = lambda o: np.asarray(o)
    schedule: BarrierSchedule | None = None


def make_bundle(
    kind: str,
    c: int,
    penalty: PenaltyConfig | None = None,
    barrier: BarrierSchedule | None = None,
    ld: LDConfig | None = None,
    mv: MVConfig | None = None,
    po: POConfig | None = None,
) -> LossBundle:
    """Build the trainer-facing handle for one loss kind over c labels.

    For ELB the returned bundle owns a fresh schedule instance; stepping it
    once per epoch is the trainer's job.
    """
    if kind == "CE":
        return LossBundle(kind, "logits", ce_loss, softmax, lambda s: predict_argmax(softmax(s)))
    if kind == "PN":
        cfg = penalty if penalty is not None else PenaltyConfig()
        return LossBundle(
            kind, "logits",
            lambda s, y: pn_loss(s, y, cfg),
            softmax,
            lambda s: predict_argmax(softmax(s)),
        )
    if kind == "ELB":
        src = barrier if barrier is not None else BarrierSchedule()
        sched = BarrierSchedule(src.t_init, src.growth, src.t_max)
        return LossBundle(
            kind, "logits",
            lambda s, y: elb_loss(s, y, sched),
            softmax,
            lambda s: predict_argmax(softmax(s)),
            schedule=sched,
        )
    if kind == "REN":
        return LossBundle(
            kind, "logits",
            lambda s, y: ren_loss(ad.sigmoid(s), y),
            lambda s: (lambda o: o / np.sum(o))(_sigmoid_np(s)),
            lambda s: ren_predict(_sigmoid_np(s)),
        )
    if kind == "LD":
        cfg = ld if ld is not None else LDConfig()
        return LossBundle(
            kind, "logits",
            lambda s, y: ld_loss(s, y, cfg),
            softmax,
            lambda s: predict_argmax(softmax(s)),
        )
    if kind == "MV":
        cfg = mv if mv is not None else MVConfig()
        return LossBundle(
            kind, "logits",
            lambda s, y: mv_loss(s, y, cfg),
            softmax,
            lambda s: predict_expectation(softmax(s)),
        )
    if kind == "PO":
        cfg = po if po is not None else POConfig()
        return LossBundle(
            kind, "poisson",
            lambda eta, y: po_loss(eta, y, c, cfg.tau),
            lambda eta: po_distribution(eta, c, cfg.tau),
            lambda eta: predict_expectation(po_distribution(eta, c, cfg.tau)),
            soi_vector=lambda eta: po_distribution(eta, c, cfg.tau),
        )
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
