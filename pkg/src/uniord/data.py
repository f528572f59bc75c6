"""Synthetic ordinal datasets, CSV ingestion, and deterministic splits.

The generator plants a genuine ordinal structure: a latent z ~ U[0,1) is
cut into c equal-width bins to give the label, and the features are a
fixed linear embedding of smooth functions of z plus Gaussian noise. With
zero noise the label is exactly recoverable from the features, so metric
differences between losses reflect the losses, not the data.

CSV contract: line 1 `# c=<int>`, line 2 header `f1,...,fd,label`, then
one sample per row (reals with `.` decimal point, label an integer in
1..c). UTF-8, comma-separated.
"""

from __future__ import annotations

import json
import math
import warnings as _warnings
from dataclasses import dataclass, field

import numpy as np

from .ordinal import LabelSpace


class DataFormatError(ValueError):
    """Malformed or out-of-contract dataset file."""


@dataclass(frozen=True)
class SyntheticSpec:
    c: int
    d: int
    n: int
    noise_sigma: float = 0.0
    embed_seed: int = 0
    sample_seed: int = 0

    def __post_init__(self):
        if self.c < 2:
            raise ValueError(f"need at least 2 labels, got {self.c}")
        if self.d < 1:
            raise ValueError(f"feature dim must be >= 1, got {self.d}")
        if self.n < 1:
            raise ValueError(f"sample count must be >= 1, got {self.n}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.noise_sigma}")

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "d": self.d,
            "n": self.n,
            "noise_sigma": self.noise_sigma,
            "embed_seed": self.embed_seed,
            "sample_seed": self.sample_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(
            c=int(d["c"]),
            d=int(d["d"]),
            n=int(d["n"]),
            noise_sigma=float(d.get("noise_sigma", 0.0)),
            embed_seed=int(d.get("embed_seed", 0)),
            sample_seed=int(d.get("sample_seed", 0)),
        )


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    label_space: LabelSpace
    provenance: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be an n x d matrix")
        n = self.features.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one sample")
        if self.labels.shape != (n,):
            raise ValueError(f"{self.labels.shape[0] if self.labels.ndim else 0} labels for {n} samples")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        c = self.label_space.c
        if self.labels.min() < 1 or self.labels.max() > c:
            raise ValueError(f"labels outside 1..{c}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, indices, provenance: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx].copy(),
            self.labels[idx].copy(),
            self.label_space,
            provenance if provenance is not None else self.provenance,
        )


def latent_embedding(z: np.ndarray) -> np.ndarray:
    """Feature basis phi(z) = [z, z^2, sin 2 pi z, cos 2 pi z], one row per z."""
    z = np.asarray(z, dtype=np.float64)
    return np.stack([z, z * z, np.sin(2.0 * np.pi * z), np.cos(2.0 * np.pi * z)], axis=1)


def generate(spec: SyntheticSpec, embedding: np.ndarray | None = None) -> Dataset:
    """Draw a dataset from the latent-bin construction.

    The d x 4 embedding matrix comes from embed_seed unless supplied
    explicitly; z and the noise come from sample_seed. The noise draw
    happens even at sigma 0 so datasets differing only in sigma share
    their latent stream.
    """
    if embedding is None:
        embedding = np.random.default_rng(spec.embed_seed).normal(size=(spec.d, 4))
    else:
        embedding = np.asarray(embedding, dtype=np.float64)
        if embedding.shape != (spec.d, 4):
            raise ValueError(f"embedding must be {(spec.d, 4)}, got {embedding.shape}")
    rng = np.random.default_rng(spec.sample_seed)
    z = rng.random(spec.n)
    labels = 1 + np.floor(z * spec.c).astype(np.int64)
    noise = rng.standard_normal((spec.n, spec.d))
    features = latent_embedding(z) @ embedding.T + spec.noise_sigma * noise
    return Dataset(features, labels, LabelSpace(spec.c), provenance=f"synthetic:{spec.to_dict()}")


# ---------------------------------------------------------------------------
# CSV round-trip


def write_csv(ds: Dataset, path) -> None:
    lines = [f"# c={ds.label_space.c}"]
    lines.append(",".join([f"f{j + 1}" for j in range(ds.d)] + ["label"]))
    for x, y in zip(ds.features, ds.labels):
        lines.append(",".join([repr(float(v)) for v in x] + [str(int(y))]))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_csv(path) -> Dataset:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("# c="):
        raise DataFormatError(f"{path}: line 1 must declare the label count as '# c=<int>'")
    try:
        c = int(lines[0][len("# c=") :])
    except ValueError:
        raise DataFormatError(f"{path}: line 1: unparseable label count {lines[0]!r}") from None
    if c < 2:
        raise DataFormatError(f"{path}: line 1: need at least 2 labels, got {c}")
    if len(lines) < 2:
        raise DataFormatError(f"{path}: missing header line")
    header = lines[1].split(",")
    if header[-1] != "label" or len(header) < 2:
        raise DataFormatError(f"{path}: line 2: header must be 'f1,...,fd,label'")
    d = len(header) - 1
    if header[:-1] != [f"f{j + 1}" for j in range(d)]:
        raise DataFormatError(f"{path}: line 2: header must be 'f1,...,fd,label'")
    feats, labels = [], []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != d + 1:
            raise DataFormatError(f"{path}: line {lineno}: expected {d + 1} fields, got {len(parts)}")
        try:
            feats.append([float(v) for v in parts[:-1]])
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: unparseable feature value") from None
        try:
            y = int(parts[-1])
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: label must be an integer") from None
        if not 1 <= y <= c:
            raise DataFormatError(f"{path}: line {lineno}: label {y} outside 1..{c}")
        labels.append(y)
    if not labels:
        raise DataFormatError(f"{path}: no samples after the header")
    return Dataset(np.array(feats), np.array(labels), LabelSpace(c), provenance=str(path))


# ---------------------------------------------------------------------------
# deterministic splitting


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _part_targets(n: int, fractions) -> list[int]:
    cum = 0.0
    bounds = [0]
    for f in fractions:
        cum += f
        bounds.append(_round_half_up(n * cum))
    return [bounds[i + 1] - bounds[i] for i in range(len(fractions))]


def _largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation summing exactly to `total`, proportional to the
    real-valued quotas; ties broken by lower index."""
    base = np.floor(quotas).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.lexsort((np.arange(len(quotas)), -(quotas - base)))
        base[order[:short]] += 1
    return base


@dataclass
class SplitResult:
    train: Dataset
    val: Dataset
    test: Dataset
    manifest: dict = field(default_factory=dict)

    def write_manifest(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.manifest, f, indent=1)


def split(ds: Dataset, fractions, seed: int) -> SplitResult:
    """Deterministic train/validation/test split, stratified by label.

    Part sizes are fixed from the fractions alone (half-up rounding of the
    cumulative sums), then filled per class by largest-remainder quotas so
    class proportions carry over as closely as integers allow. Any class
    smaller than the number of parts downgrades the whole split to
    unstratified, with a warning recorded in the manifest.
    """
    fractions = [float(f) for f in fractions]
    if len(fractions) != 3:
        raise ValueError(f"expected 3 fractions, got {len(fractions)}")
    if any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be positive, got {fractions}")
    if sum(fractions) > 1.0 + 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)} > 1")
    targets = _part_targets(ds.n, fractions)
    if any(t < 1 for t in targets):
        raise ValueError(f"part sizes {targets} from n={ds.n}; every part needs >= 1 sample")
    rng = np.random.default_rng(seed)
    warnings: list[str] = []

    classes = np.unique(ds.labels)
    counts = {int(k): int(np.sum(ds.labels == k)) for k in classes}
    min_count = min(counts.values())
    if min_count < len(targets):
        msg = (
            f"class with {min_count} samples cannot stratify into {len(targets)} parts; "
            "falling back to an unstratified split"
        )
        warnings.append(msg)
        _warnings.warn(msg, stacklevel=2)
        perm = rng.permutation(ds.n)
        parts, lo = [], 0
        for t in targets:
            parts.append(np.sort(perm[lo : lo + t]))
            lo += t
    else:
        pools = {int(k): rng.permutation(np.flatnonzero(ds.labels == k)) for k in classes}
        used = {int(k): 0 for k in classes}
        remaining = np.array([counts[int(k)] for k in classes], dtype=np.float64)
        parts = []
        for t in targets:
            n_left = remaining.sum()
            take = _largest_remainder(remaining * (t / n_left), t)
            chunk = []
            for k, cnt in zip(classes, take):
                k = int(k)
                chunk.append(pools[k][used[k] : used[k] + int(cnt)])
                used[k] += int(cnt)
            parts.append(np.sort(np.concatenate(chunk)))
            remaining = remaining - take

    names = ("train", "val", "test")
    manifest = {
        "seed": seed,
        "fractions": fractions,
        "sizes": {nm: int(len(p)) for nm, p in zip(names, parts)},
        "indices": {nm: [int(i) for i in p] for nm, p in zip(names, parts)},
        "warnings": warnings,
    }
    tr, va, te = (ds.subset(p, provenance=f"{ds.provenance}[{nm}]") for nm, p in zip(names, parts))
    return SplitResult(tr, va, te, manifest)


def kfold_indices(labels, k: int, seed: int) -> list[np.ndarray]:
    """Partition sample indices into k near-equal folds, stratified by
    dealing each class's shuffled pool round-robin across folds."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    if k > n:
        raise ValueError(f"cannot cut {n} samples into {k} folds")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    slot = 0
    for cls in np.unique(labels):
        for i in rng.permutation(np.flatnonzero(labels == cls)):
            folds[slot % k].append(int(i))
            slot += 1
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]
