"""Deterministic mini-batch SGD training with best-validation selection.

One run wires together a dataset split, a seeded MLP, one loss kind, and
the metrics, producing a serializable RunRecord. Determinism contract:
the same (config, model spec, data) always yields the same record, modulo
the wall-time field. The shuffle stream is derived from the config seed
through a spawned child sequence, so it never collides with the model's
initialization stream even when the two integer seeds are equal, and
growing the epoch count never perturbs initialization.

Epoch e trains at lr(e) = max(lr0 * factor^floor(e / every), lr_min); the
barrier temperature (ELB only) steps once after every epoch, and the
parameters always warm-start from the previous epoch — they are never
re-initialized between temperature updates.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from . import autodiff as ad
from . import model as model_mod
from .autodiff import DiffValue, Tape
from .data import Dataset, kfold_indices
from .losses import (
    BarrierSchedule,
    LDConfig,
    LOSS_KINDS,
    LossBundle,
    MVConfig,
    POConfig,
    PenaltyConfig,
    batch_reduce,
    head_for,
    make_bundle,
)
from .metrics import MetricsReport, mae as mae_metric, soi, violation_histogram
from .model import MLPSpec, ParameterSet

RECORD_SCHEMA_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Non-finite loss or gradient; carries the partial record if any."""

    def __init__(self, message: str, record: "RunRecord | None" = None):
        super().__init__(message)
        self.record = record


@dataclass
class TrainConfig:
    loss_kind: str = "CE"
    epochs: int = 300
    batch_size: int = 8
    lr: float = 1e-3
    lr_decay_every: int = 100
    lr_decay_factor: float = 0.1
    lr_min: float = 1e-7
    momentum: float = 0.9
    weight_decay: float = 1e-5
    barrier: BarrierSchedule = field(default_factory=BarrierSchedule)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    ld: LDConfig = field(default_factory=LDConfig)
    mv: MVConfig = field(default_factory=MVConfig)
    po: POConfig = field(default_factory=POConfig)
    seed: int = 0

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}; expected one of {LOSS_KINDS}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.lr_decay_every < 1:
            raise ValueError(f"lr_decay_every must be >= 1, got {self.lr_decay_every}")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError(f"lr_decay_factor must lie in (0,1], got {self.lr_decay_factor}")
        if self.lr_min < 0:
            raise ValueError(f"lr_min must be >= 0, got {self.lr_min}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0,1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight decay must be >= 0, got {self.weight_decay}")

    def lr_at(self, epoch: int) -> float:
        return max(self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every), self.lr_min)

    def make_bundle(self, c: int) -> LossBundle:
        return make_bundle(
            self.loss_kind, c,
            penalty=self.penalty, barrier=self.barrier,
            ld=self.ld, mv=self.mv, po=self.po,
        )

    def to_dict(self) -> dict:
        return {
            "loss_kind": self.loss_kind,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "lr_decay_every": self.lr_decay_every,
            "lr_decay_factor": self.lr_decay_factor,
            "lr_min": self.lr_min,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "barrier": {"t_init": self.barrier.t_init, "growth": self.barrier.growth, "t_max": self.barrier.t_max},
            "penalty": {"lam": self.penalty.lam, "eps": self.penalty.eps},
            "ld": {"sigma": self.ld.sigma},
            "mv": {"lambda1": self.mv.lambda1, "lambda2": self.mv.lambda2},
            "po": {"tau": self.po.tau},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kw = {k: d[k] for k in (
            "loss_kind", "epochs", "batch_size", "lr", "lr_decay_every", "lr_decay_factor",
            "lr_min", "momentum", "weight_decay", "seed",
        ) if k in d}
        if "barrier" in d:
            kw["barrier"] = BarrierSchedule(**d["barrier"])
        if "penalty" in d:
            kw["penalty"] = PenaltyConfig(**d["penalty"])
        if "ld" in d:
            kw["ld"] = LDConfig(**d["ld"])
        if "mv" in d:
            kw["mv"] = MVConfig(**d["mv"])
        if "po" in d:
            kw["po"] = POConfig(**d["po"])
        return cls(**kw)


@dataclass
class RunRecord:
    """Everything one training run produced, JSON-serializable.

    Deterministic given (config, model spec, data) except wall_time_s.
    best_epoch maximizes validation SOI_yhat with lower MAE breaking ties
    (earlier epoch wins exact ties); best_epoch_by_mae is the symmetric
    MAE-first selection, logged so either criterion can be reported. Test
    metrics come from the SOI-selected checkpoint, which is embedded under
    `checkpoint` in the model module's format.
    """

    loss_kind: str
    config: dict
    model_spec: dict
    train_loss: list[float] = field(default_factory=list)
    val_metrics: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_epoch_by_mae: int | None = None
    test_metrics: dict | None = None
    checkpoint: dict | None = None
    standardization: dict = field(default_factory=dict)
    status: str = "ok"
    error: str | None = None
    wall_time_s: float = 0.0
    schema_version: int = RECORD_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "loss_kind": self.loss_kind,
            "config": self.config,
            "model_spec": self.model_spec,
            "train_loss": self.train_loss,
            "val_metrics": self.val_metrics,
            "best_epoch": self.best_epoch,
            "best_epoch_by_mae": self.best_epoch_by_mae,
            "test_metrics": self.test_metrics,
            "checkpoint": self.checkpoint,
            "standardization": self.standardization,
            "status": self.status,
            "error": self.error,
            "wall_time_s": self.wall_time_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        ver = d.get("schema_version")
        if ver != RECORD_SCHEMA_VERSION:
            raise ValueError(f"unsupported record schema version {ver!r}")
        kw = dict(d)
        kw.pop("schema_version")
        return cls(**kw)


@dataclass
class Standardizer:
    """Per-column zero-mean unit-variance transform fit on train only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std == 0.0, 1.0, std)
        return cls(mean, std)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def sgd_step(
    params: Iterable[tuple[str, DiffValue]],
    velocity: dict,
    lr: float,
    momentum: float,
    weight_decay: float,
    context: str = "",
) -> None:
    """velocity <- momentum * velocity + (grad + weight_decay * param);
    param <- param - lr * velocity. Missing gradients count as zero."""
    for name, p in params:
        g = p.grad
        if g is None:
            g = 0.0 if isinstance(p.value, float) else np.zeros_like(p.value)
        finite = math.isfinite(g) if isinstance(g, float) else bool(np.all(np.isfinite(g)))
        if not finite:
            where = f" at {context}" if context else ""
            raise TrainingDiverged(f"non-finite gradient for parameter {name}{where}")
        v = velocity[name]
        v = momentum * v + (g + weight_decay * p.value)
        velocity[name] = v
        p.value = p.value - lr * v


def evaluate(pset: ParameterSet, bundle: LossBundle, X: np.ndarray, y: np.ndarray) -> MetricsReport:
    """Tape-free metrics pass: MAE of the bundle's decision rule, SOI about
    the argmax prediction and the true label, per-pair violations.

    Order metrics run on the bundle's soi_vector (score space for logits
    heads), which matches every strictly monotone posterior map while
    staying tie-free where softmax would underflow."""
    outputs = model_mod.forward_values(pset, X)
    vectors = np.array([bundle.soi_vector(o) for o in outputs])
    preds = [bundle.predict(o) for o in outputs]
    nu_pred = np.argmax(vectors, axis=1) + 1
    soi_pred = float(np.mean([soi(p, int(v)) for p, v in zip(vectors, nu_pred)]))
    soi_true = float(np.mean([soi(p, int(v)) for p, v in zip(vectors, y)]))
    hist = violation_histogram(vectors, nu_pred)
    return MetricsReport(
        mae=mae_metric(preds, y),
        soi_predicted=soi_pred,
        soi_true=soi_true,
        violation_histogram=[int(h) for h in hist],
        n_samples=len(y),
    )


def _better(cand: tuple[float, float], best: tuple[float, float]) -> bool:
    """(soi, mae) strictly better: higher SOI, lower MAE on ties."""
    return cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1])


def train(train_ds: Dataset, val_ds: Dataset, test_ds: Dataset, spec: MLPSpec, cfg: TrainConfig) -> RunRecord:
    """Run one full training: returns the RunRecord, raising
    TrainingDiverged (with the partial record attached) on non-finite
    loss or gradients."""
    c = train_ds.label_space.c
    for part, ds in (("val", val_ds), ("test", test_ds)):
        if ds.label_space.c != c:
            raise ValueError(f"{part} split has {ds.label_space.c} labels, train has {c}")
    if spec.c != c:
        raise ValueError(f"model emits {spec.c} labels, data has {c}")
    if spec.input_dim != train_ds.d:
        raise ValueError(f"model expects {spec.input_dim} features, data has {train_ds.d}")
    if spec.head != head_for(cfg.loss_kind):
        raise ValueError(
            f"loss {cfg.loss_kind} needs the {head_for(cfg.loss_kind)!r} head, model has {spec.head!r}"
        )

    t0 = time.perf_counter()
    std = Standardizer.fit(train_ds.features)
    Xtr, ytr = std.apply(train_ds.features), train_ds.labels
    Xva, yva = std.apply(val_ds.features), val_ds.labels
    Xte, yte = std.apply(test_ds.features), test_ds.labels

    pset = model_mod.init(spec)
    bundle = cfg.make_bundle(c)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    velocity = {
        name: (0.0 if isinstance(p.value, float) else np.zeros_like(p.value))
        for name, p in pset.named()
    }

    record = RunRecord(
        loss_kind=cfg.loss_kind,
        config=cfg.to_dict(),
        model_spec=spec.to_dict(),
        standardization=std.to_dict(),
    )
    tape = Tape()
    n = train_ds.n
    best_key: tuple[float, float] | None = None
    best_key_mae: tuple[float, float] | None = None
    best_values: list[np.ndarray] | None = None

    def fail(msg: str):
        record.status = "diverged"
        record.error = msg
        record.wall_time_s = time.perf_counter() - t0
        return TrainingDiverged(msg, record)

    for epoch in range(cfg.epochs):
        lr_e = cfg.lr_at(epoch)
        perm = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            tape.clear()
            pset.watch_all(tape)
            per = []
            for i in idx:
                x = tape.const(Xtr[i])
                per.append(bundle.loss(model_mod.forward(pset, x), int(ytr[i])))
            root = batch_reduce(per)
            if not math.isfinite(root.value):
                raise fail(f"non-finite loss {root.value} at epoch {epoch}, batch {lo // cfg.batch_size}")
            ad.backward(root)
            try:
                sgd_step(
                    pset.named(), velocity, lr_e, cfg.momentum, cfg.weight_decay,
                    context=f"epoch {epoch}, batch {lo // cfg.batch_size}",
                )
            except TrainingDiverged as exc:
                raise fail(str(exc)) from None
            loss_sum += root.value * len(idx)
        record.train_loss.append(loss_sum / n)
        if bundle.schedule is not None:
            bundle.schedule.step()
        rep = evaluate(pset, bundle, Xva, yva)
        record.val_metrics.append(rep.to_dict())
        key = (rep.soi_predicted, rep.mae)
        if best_key is None or _better(key, best_key):
            best_key = key
            record.best_epoch = epoch
            best_values = pset.values()
        key_mae = (-rep.mae, -rep.soi_predicted)
        if best_key_mae is None or key_mae > best_key_mae:
            best_key_mae = key_mae
            record.best_epoch_by_mae = epoch

    if best_values is not None:
        pset.load_values(best_values)
    record.checkpoint = pset.to_checkpoint()
    record.test_metrics = evaluate(pset, bundle, Xte, yte).to_dict()
    record.wall_time_s = time.perf_counter() - t0
    return record


# ---------------------------------------------------------------------------
# k-fold cross-validation


@dataclass
class KFoldResult:
    records: list[RunRecord | None]
    errors: list[str | None]
    aggregate: dict


def aggregate_runs(records: Iterable[RunRecord]) -> dict:
    """Mean and (population) standard deviation of the test metrics."""
    recs = [r for r in records if r is not None and r.test_metrics is not None]
    out: dict = {"n_runs": len(recs)}
    for key in ("mae", "soi_predicted", "soi_true"):
        vals = np.array([r.test_metrics[key] for r in recs], dtype=np.float64)
        if len(vals):
            out[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
        else:
            out[key] = {"mean": float("nan"), "std": float("nan")}
    return out


def kfold(ds: Dataset, k: int, seed: int, spec: MLPSpec, cfg: TrainConfig) -> KFoldResult:
    """k runs, fold i serving as both validation and test while the rest
    trains; per-fold seeds are offset by the fold index. Failed folds are
    recorded and excluded from the aggregate."""
    folds = kfold_indices(ds.labels, k, seed)
    records: list[RunRecord | None] = []
    errors: list[str | None] = []
    for i, fold in enumerate(folds):
        rest = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        tr = ds.subset(rest, provenance=f"{ds.provenance}[fold{i}:train]")
        held = ds.subset(fold, provenance=f"{ds.provenance}[fold{i}:heldout]")
        fold_spec = replace(spec, seed=spec.seed + i)
        fold_cfg = replace(cfg, seed=cfg.seed + i)
        try:
            records.append(train(tr, held, held, fold_spec, fold_cfg))
            errors.append(None)
        except TrainingDiverged as exc:
            records.append(exc.record)
            errors.append(str(exc))
    agg = aggregate_runs(r for r, e in zip(records, errors) if e is None)
    agg["failed_folds"] = [i for i, e in enumerate(errors) if e is not None]
    return KFoldResult(records, errors, agg)
