"""Tape-based reverse-mode differentiation over float64 scalars and dense vectors.

Values are Python floats (scalars) or numpy float64 arrays (vectors, weight
matrices). Every operation appends one node to a Tape; since the tape is
filled in forward evaluation order, walking it backwards is already a reverse
topological order and each node is pulled exactly once.

Kept deliberately small: no general broadcasting (scalar-vector only), no
higher-order derivatives, no general convolution. Adjacent differences are a
fixed 2-tap slide (`slide_diff`).
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when an op is evaluated outside its mathematical domain."""


class GradientCheckError(RuntimeError):
    """Raised when a finite-difference probe evaluation fails."""


class DiffValue:
    """A node on a tape: a value plus gradient-accumulation linkage.

    `value` is a float or an ndarray; `grad` has the same shape once a
    backward pass from a scalar root has reached this node. `nid` is the
    position on the tape.
    """

    __slots__ = ("value", "grad", "tape", "nid", "no_grad", "_pull")

    def __init__(self, value, tape=None):
        self.value = _normalize(value)
        self.grad = None
        self.tape = tape
        self.nid = None
        self.no_grad = False
        self._pull = None
        if tape is not None:
            tape._append(self)

    @property
    def shape(self):
        v = self.value
        return () if isinstance(v, float) else v.shape

    def __repr__(self):
        return f"DiffValue(value={self.value!r}, nid={self.nid})"

    # Convenience operators; hot paths call the module-level ops directly.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


class Tape:
    """Append-only record of one forward evaluation.

    Cleared between training steps; leaves representing persistent
    parameters are re-attached each step with `watch`.
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[DiffValue] = []

    def _append(self, dv: DiffValue):
        dv.tape = self
        dv.nid = len(self.nodes)
        self.nodes.append(dv)

    def leaf(self, value) -> DiffValue:
        """Record a gradient-tracked input (a parameter or variable)."""
        return DiffValue(value, self)

    def const(self, value) -> DiffValue:
        """Record an input whose gradient nobody will read."""
        dv = DiffValue(value, self)
        dv.no_grad = True
        return dv

    def watch(self, dv: DiffValue):
        """Re-attach an existing leaf to this tape and reset its gradient."""
        if dv._pull is not None:
            raise ValueError("only leaf values can be watched")
        dv.grad = None
        self._append(dv)

    def clear(self):
        """Drop all nodes. DiffValues from earlier steps become stale."""
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


def _normalize(value):
    if isinstance(value, float):
        return value
    if isinstance(value, (int, np.integer, np.floating)):
        return float(value)
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return float(arr)
    return arr


def _node(tape, value, pull):
    dv = DiffValue.__new__(DiffValue)
    dv.value = value
    dv.grad = None
    dv.no_grad = False
    dv._pull = pull
    tape._append(dv)
    return dv


def _acc(p, g):
    # Never accumulate in place: pass-through pulls may alias `g` between
    # siblings, and `a + b` keeps them independent.
    p.grad = g if p.grad is None else p.grad + g


def backward(root: DiffValue) -> None:
    """Populate `grad` on every node reachable from a scalar root."""
    if not isinstance(root.value, float):
        raise ValueError(f"backward root must be scalar, got shape {root.shape}")
    tape = root.tape
    if tape is None:
        raise ValueError("backward root is not attached to a tape")
    root.grad = 1.0
    for node in reversed(tape.nodes):
        if node.grad is not None and node._pull is not None:
            node._pull(node.grad)


# ---------------------------------------------------------------------------
# primitive ops


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, DiffValue):
            return x.tape
    raise ValueError("at least one operand must be a DiffValue")


def add(a, b) -> DiffValue:
    if not isinstance(b, DiffValue):
        av, k = a.value, _normalize(b)
        if isinstance(av, float) and not isinstance(k, float):
            # scalar node + constant vector broadcasts up
            return _node(a.tape, av + k, lambda g, a=a: _acc(a, float(np.sum(g))))
        return _node(a.tape, av + k, lambda g, a=a: _acc(a, g))
    if not isinstance(a, DiffValue):
        return add(b, a)
    av, bv = a.value, b.value
    a_scalar, b_scalar = isinstance(av, float), isinstance(bv, float)
    if a_scalar == b_scalar:
        if not a_scalar and av.shape != bv.shape:
            raise ValueError(f"add shape mismatch: {av.shape} vs {bv.shape}")

        def pull(g, a=a, b=b):
            _acc(a, g)
            _acc(b, g)

    elif a_scalar:  # scalar + vector

        def pull(g, a=a, b=b):
            _acc(a, float(np.sum(g)))
            _acc(b, g)

    else:  # vector + scalar

        def pull(g, a=a, b=b):
            _acc(a, g)
            _acc(b, float(np.sum(g)))

    return _node(a.tape, av + bv, pull)


def neg(a: DiffValue) -> DiffValue:
    return _node(a.tape, -a.value, lambda g, a=a: _acc(a, -g))


def sub(a, b) -> DiffValue:
    if not isinstance(b, DiffValue):
        return add(a, -_normalize(b))
    if not isinstance(a, DiffValue):
        return add(neg(b), _normalize(a))
    av, bv = a.value, b.value
    a_scalar, b_scalar = isinstance(av, float), isinstance(bv, float)
    if a_scalar == b_scalar:
        if not a_scalar and av.shape != bv.shape:
            raise ValueError(f"sub shape mismatch: {av.shape} vs {bv.shape}")

        def pull(g, a=a, b=b):
            _acc(a, g)
            _acc(b, -g)

    elif a_scalar:

        def pull(g, a=a, b=b):
            _acc(a, float(np.sum(g)))
            _acc(b, -g)

    else:

        def pull(g, a=a, b=b):
            _acc(a, g)
            _acc(b, -float(np.sum(g)))

    return _node(a.tape, av - bv, pull)


def mul(a, b) -> DiffValue:
    if not isinstance(b, DiffValue):
        k = _normalize(b)
        if isinstance(a.value, float) and not isinstance(k, float):
            return _node(a.tape, a.value * k, lambda g, a=a, k=k: _acc(a, float(np.sum(k * g))))
        return _node(a.tape, a.value * k, lambda g, a=a, k=k: _acc(a, k * g))
    if not isinstance(a, DiffValue):
        return mul(b, a)
    av, bv = a.value, b.value
    a_scalar, b_scalar = isinstance(av, float), isinstance(bv, float)
    if a_scalar == b_scalar:
        if not a_scalar and av.shape != bv.shape:
            raise ValueError(f"mul shape mismatch: {av.shape} vs {bv.shape}")

        def pull(g, a=a, b=b, av=av, bv=bv):
            _acc(a, bv * g)
            _acc(b, av * g)

    elif a_scalar:  # scalar * vector

        def pull(g, a=a, b=b, av=av, bv=bv):
            _acc(a, float(np.sum(bv * g)))
            _acc(b, av * g)

    else:

        def pull(g, a=a, b=b, av=av, bv=bv):
            _acc(a, bv * g)
            _acc(b, float(np.sum(av * g)))

    return _node(a.tape, av * bv, pull)


def matvec(w: DiffValue, x: DiffValue) -> DiffValue:
    """Matrix-vector product, w: (m, n), x: (n,)."""
    wv, xv = w.value, x.value
    if isinstance(wv, float) or wv.ndim != 2:
        raise ValueError("matvec needs a 2-d matrix on the left")
    if isinstance(xv, float) or xv.ndim != 1 or xv.shape[0] != wv.shape[1]:
        raise ValueError(f"matvec shape mismatch: {getattr(wv, 'shape', ())} @ {getattr(xv, 'shape', ())}")

    def pull(g, w=w, x=x, wv=wv, xv=xv):
        _acc(w, np.outer(g, xv))
        if not x.no_grad:
            _acc(x, wv.T @ g)

    return _node(w.tape, wv @ xv, pull)


def affine(w: DiffValue, x: DiffValue, b: DiffValue) -> DiffValue:
    """Fused w @ x + b; same adjoints as matvec followed by add."""
    wv, xv, bv = w.value, x.value, b.value
    if wv.shape[1] != xv.shape[0] or bv.shape[0] != wv.shape[0]:
        raise ValueError(f"affine shape mismatch: {wv.shape} @ {xv.shape} + {bv.shape}")

    def pull(g, w=w, x=x, b=b, wv=wv, xv=xv):
        _acc(w, np.outer(g, xv))
        _acc(b, g)
        if not x.no_grad:
            _acc(x, wv.T @ g)

    return _node(w.tape, wv @ xv + bv, pull)


def exp(a: DiffValue) -> DiffValue:
    av = a.value
    out = math.exp(av) if isinstance(av, float) else np.exp(av)
    return _node(a.tape, out, lambda g, a=a, out=out: _acc(a, out * g))


def log(a: DiffValue) -> DiffValue:
    av = a.value
    if isinstance(av, float):
        if av <= 0.0:
            raise DomainError(f"log of non-positive value {av} at node {a.nid}")
        out = math.log(av)
    else:
        if np.any(av <= 0.0):
            bad = int(np.argmax(av <= 0.0))
            raise DomainError(
                f"log of non-positive value {av[bad]} at node {a.nid}, entry {bad}"
            )
        out = np.log(av)

    def pull(g, a=a, av=av):
        _acc(a, g / av)

    return _node(a.tape, out, pull)


def square(a: DiffValue) -> DiffValue:
    av = a.value

    def pull(g, a=a, av=av):
        _acc(a, 2.0 * av * g)

    return _node(a.tape, av * av, pull)


def max_with_const(a: DiffValue, k: float = 0.0) -> DiffValue:
    """Elementwise max(value, k); slope 0 at the breakpoint (left branch)."""
    av = a.value
    if isinstance(av, float):
        out = av if av > k else k

        def pull(g, a=a, active=av > k):
            if active:
                _acc(a, g)

    else:
        mask = av > k
        out = np.where(mask, av, k)

        def pull(g, a=a, mask=mask):
            _acc(a, g * mask)

    return _node(a.tape, out, pull)


def relu(a: DiffValue) -> DiffValue:
    return max_with_const(a, 0.0)


def vsum(a: DiffValue) -> DiffValue:
    av = a.value
    n = av.shape[0]

    def pull(g, a=a, n=n):
        _acc(a, np.full(n, g))

    return _node(a.tape, float(np.sum(av)), pull)


def logsumexp(a: DiffValue) -> DiffValue:
    """log sum exp of a vector, stabilized by max subtraction."""
    av = a.value
    m = float(np.max(av))
    e = np.exp(av - m)
    z = float(np.sum(e))
    p = e / z  # softmax, reused as the adjoint

    def pull(g, a=a, p=p):
        _acc(a, p * g)

    return _node(a.tape, m + math.log(z), pull)


def pick(a: DiffValue, i: int) -> DiffValue:
    av = a.value
    n = av.shape[0]
    if not 0 <= i < n:
        raise ValueError(f"pick index {i} out of range for length {n}")

    def pull(g, a=a, i=i, n=n):
        d = np.zeros(n)
        d[i] = g
        _acc(a, d)

    return _node(a.tape, float(av[i]), pull)


def weighted_sum(a: DiffValue, w) -> DiffValue:
    """Dot product with a constant weight vector."""
    av = a.value
    w = np.asarray(w, dtype=np.float64)
    if w.shape != av.shape:
        raise ValueError(f"weighted_sum shape mismatch: {av.shape} vs {w.shape}")

    def pull(g, a=a, w=w):
        _acc(a, w * g)

    return _node(a.tape, float(w @ av), pull)


def slide_diff(a: DiffValue) -> DiffValue:
    """Adjacent differences v_k - v_{k+1}: the fixed [+1, -1] 2-tap slide."""
    av = a.value
    n = av.shape[0]
    if n < 2:
        raise ValueError("slide_diff needs a vector of length >= 2")

    def pull(g, a=a, n=n):
        d = np.zeros(n)
        d[:-1] += g
        d[1:] -= g
        _acc(a, d)

    return _node(a.tape, av[:-1] - av[1:], pull)


def sigmoid(a: DiffValue) -> DiffValue:
    av = a.value
    if isinstance(av, float):
        out = 1.0 / (1.0 + math.exp(-av)) if av >= 0 else math.exp(av) / (1.0 + math.exp(av))
    else:
        out = np.empty_like(av)
        pos = av >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
        ea = np.exp(av[~pos])
        out[~pos] = ea / (1.0 + ea)

    def pull(g, a=a, out=out):
        _acc(a, out * (1.0 - out) * g)

    return _node(a.tape, out, pull)


def softplus(a: DiffValue) -> DiffValue:
    """log(1 + exp(x)) without overflow; adjoint is the logistic."""
    av = a.value
    if isinstance(av, float):
        out = math.log1p(math.exp(-abs(av))) + max(av, 0.0)
        s = 1.0 / (1.0 + math.exp(-av)) if av >= 0 else math.exp(av) / (1.0 + math.exp(av))
    else:
        out = np.log1p(np.exp(-np.abs(av))) + np.maximum(av, 0.0)
        s = np.empty_like(av)
        pos = av >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
        ea = np.exp(av[~pos])
        s[~pos] = ea / (1.0 + ea)

    def pull(g, a=a, s=s):
        _acc(a, s * g)

    return _node(a.tape, out, pull)


def elementwise(a: DiffValue, f, df) -> DiffValue:
    """Custom elementwise op from a value function and its derivative."""
    av = a.value

    def pull(g, a=a, d=df(av)):
        _acc(a, d * g)

    return _node(a.tape, f(av), pull)


def piecewise_by_threshold(
    r: DiffValue,
    threshold: float,
    left: Callable[[DiffValue], DiffValue],
    right: Callable[[DiffValue], DiffValue],
) -> DiffValue:
    """Evaluate `left(r)` if r <= threshold else `right(r)`.

    The branch is chosen on the forward value and only that branch is
    recorded, so the backward pass differentiates the branch taken. At the
    exact breakpoint the left branch applies.
    """
    if not isinstance(r.value, float):
        raise ValueError("piecewise_by_threshold takes a scalar")
    return left(r) if r.value <= threshold else right(r)


def mean_of(items: Sequence[DiffValue]) -> DiffValue:
    """Arithmetic mean of scalar nodes (the batch reduction)."""
    n = len(items)
    if n == 0:
        raise ValueError("mean of an empty batch")
    for it in items:
        if not isinstance(it.value, float):
            raise ValueError("mean_of expects scalar nodes")
    total = 0.0
    for it in items:
        total += it.value

    def pull(g, items=tuple(items), inv=1.0 / n):
        share = g * inv
        for it in items:
            _acc(it, share)

    return _node(items[0].tape, total / n, pull)


# ---------------------------------------------------------------------------
# finite-difference oracle


def gradient_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Max relative error between the analytic gradient of f and central
    differences.

    `f` maps a parameter vector to (value, analytic gradient). `x` must not
    sit within `step` of a piecewise branch boundary of f, otherwise the two
    sides of a probe straddle different branches.
    """
    x = np.asarray(x, dtype=np.float64)
    _, analytic = f(x)
    analytic = np.asarray(analytic, dtype=np.float64)
    worst = 0.0
    for i in range(x.shape[0]):
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        try:
            fp, _ = f(xp)
            fm, _ = f(xm)
        except Exception as exc:
            raise GradientCheckError(f"evaluation failed at probe {i}: {exc}") from exc
        central = (fp - fm) / (2.0 * step)
        err = abs(analytic[i] - central) / max(1.0, abs(central))
        if err > worst:
            worst = err
    return worst
