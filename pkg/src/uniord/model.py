"""Small feedforward predictor with deterministic seeded initialization.

Two heads: "logits" emits c unbounded scores; "poisson" appends one more
affine layer mapping those c outputs to a single value, squashed through
softplus into a positive rate. Weights start from a zero-mean uniform
with bound sqrt(6 / (fan_in + fan_out)); biases start at zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue, Tape

CHECKPOINT_VERSION = 1

HEADS = ("logits", "poisson")


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    c: int
    head: str = "logits"
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden dims must be >= 1, got {self.hidden_dims}")
        if self.c < 2:
            raise ValueError(f"need at least 2 labels, got {self.c}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.activation != "relu":
            raise ValueError(f"only the rectifier activation is supported, got {self.activation!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per affine layer, including the rate layer."""
        dims = [self.input_dim, *self.hidden_dims, self.c]
        pairs = [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
        if self.head == "poisson":
            pairs.append((self.c, 1))
        return pairs

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "c": self.c,
            "head": self.head,
            "activation": self.activation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLPSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d["hidden_dims"]),
            c=int(d["c"]),
            head=d.get("head", "logits"),
            activation=d.get("activation", "relu"),
            seed=int(d.get("seed", 0)),
        )


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


@dataclass
class ParameterSet:
    """All affine layers of one model as autodiff leaves."""

    spec: MLPSpec
    layers: list[tuple[DiffValue, DiffValue]] = field(default_factory=list)

    def named(self):
        for i, (w, b) in enumerate(self.layers):
            yield f"w{i}", w
            yield f"b{i}", b

    @property
    def n_parameters(self) -> int:
        return sum(w.value.size + b.value.size for w, b in self.layers)

    def watch_all(self, tape: Tape) -> None:
        """Re-home every parameter onto a fresh tape for the next batch."""
        for _, p in self.named():
            tape.watch(p)

    def values(self) -> list[np.ndarray]:
        return [p.value.copy() for _, p in self.named()]

    def load_values(self, values: list[np.ndarray]) -> None:
        params = [p for _, p in self.named()]
        if len(values) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(values)}")
        for p, v in zip(params, values):
            v = np.asarray(v, dtype=np.float64)
            if v.shape != p.value.shape:
                raise ValueError(f"shape mismatch: {v.shape} vs {p.value.shape}")
            p.value = v.copy()

    def to_checkpoint(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "spec": self.spec.to_dict(),
            "layers": [
                {"w": w.value.tolist(), "b": b.value.tolist()} for w, b in self.layers
            ],
        }

    @classmethod
    def from_checkpoint(cls, d: dict) -> "ParameterSet":
        ver = d.get("format_version")
        if ver != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {ver!r}")
        spec = MLPSpec.from_dict(d["spec"])
        pset = init(spec)
        pset.load_values(
            [np.asarray(a, dtype=np.float64) for layer in d["layers"] for a in (layer["w"], layer["b"])]
        )
        return pset


def init(spec: MLPSpec) -> ParameterSet:
    """Seeded parameter draw; the same seed always gives the same values."""
    rng = np.random.default_rng(spec.seed)
    tape = Tape()  # holding tape; training re-homes the leaves per batch
    layers = []
    for fan_in, fan_out in spec.layer_dims:
        bound = glorot_bound(fan_in, fan_out)
        w = tape.leaf(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        b = tape.leaf(np.zeros(fan_out))
        layers.append((w, b))
    return ParameterSet(spec, layers)


def forward(pset: ParameterSet, x: DiffValue) -> DiffValue:
    """Taped forward pass for one sample: affine-rectifier stack, then the
    head. Returns a length-c score vector or a positive scalar rate."""
    spec = pset.spec
    if x.shape != (spec.input_dim,):
        raise ValueError(f"input dim {x.shape} does not match spec {(spec.input_dim,)}")
    n_hidden = len(spec.hidden_dims)
    h = x
    for w, b in pset.layers[:n_hidden]:
        h = ad.relu(ad.affine(w, h, b))
    w, b = pset.layers[n_hidden]
    out = ad.affine(w, h, b)
    if spec.head == "poisson":
        wr, br = pset.layers[n_hidden + 1]
        out = ad.softplus(ad.pick(ad.affine(wr, out, br), 0))
    return out


def forward_values(pset: ParameterSet, X: np.ndarray) -> np.ndarray:
    """Tape-free forward over a batch, one row per sample.

    Applies the same per-sample operations as `forward` so the values are
    bit-identical; shape (n, c) for the logits head, (n,) for poisson.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    spec = pset.spec
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"input dim {X.shape[1]} does not match spec {spec.input_dim}")
    n_hidden = len(spec.hidden_dims)
    weights = [(w.value, b.value) for w, b in pset.layers]
    outs = []
    for x in X:
        h = x
        for w, b in weights[:n_hidden]:
            h = np.maximum(np.dot(w, h) + b, 0.0)
        w, b = weights[n_hidden]
        o = np.dot(w, h) + b
        if spec.head == "poisson":
            wr, br = weights[n_hidden + 1]
            z = float(np.dot(wr, o)[0] + br[0])
            o = math.log1p(math.exp(z)) if z <= 0.0 else z + math.log1p(math.exp(-z))
        outs.append(o)
    return np.array(outs)


def save_checkpoint(pset: ParameterSet, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(pset.to_checkpoint(), f)


def load_checkpoint(path) -> ParameterSet:
    with open(path, encoding="utf-8") as f:
        return ParameterSet.from_checkpoint(json.load(f))
