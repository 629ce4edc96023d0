"""Datasets, synthetic generators and experiment partitions.

Synthetic data comes in two flavours: Gaussian blobs (tabular stand-in for
the attribute datasets) and procedurally generated one-channel images (stand-in
for the image benchmarks). Both are pure functions of a seed.

``make_splits`` carves a dataset into the roles used throughout: two model
validation pools V1/V2, the adversary pool, the target pool, the target
training set and the per-shadow training sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass
class LabeledDataset:
    x: np.ndarray  # (n, d) or (n, c, h, w), float32
    y: np.ndarray  # (n,), int64 class indices in [0, n_classes)
    ids: np.ndarray  # (n,), int64 stable record identifiers
    n_classes: int

    def __post_init__(self):
        if not (len(self.x) == len(self.y) == len(self.ids)):
            raise ShapeError("records, labels and ids must have equal lengths")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ShapeError(f"labels outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.x)

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.x[idx], self.y[idx], self.ids[idx], self.n_classes)


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str  # 'blobs' | 'images'
    n_classes: int
    n_per_class: int
    dim: int = 32  # feature width for blobs
    image_size: int = 16  # side length for images
    separation: float = 4.0  # class signal magnitude relative to unit noise

    def __post_init__(self):
        if self.kind not in ("blobs", "images"):
            raise ConfigError(f"unknown synthetic kind {self.kind!r}")
        if self.n_classes < 2 or self.n_per_class < 1:
            raise ConfigError("need at least 2 classes and 1 record per class")


def gen_synthetic(spec: SyntheticSpec, rng: np.random.Generator) -> LabeledDataset:
    """Reproducible synthetic dataset; records are shuffled across classes."""
    n = spec.n_classes * spec.n_per_class
    y = np.repeat(np.arange(spec.n_classes), spec.n_per_class)
    if spec.kind == "blobs":
        centers = rng.standard_normal((spec.n_classes, spec.dim))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        centers *= spec.separation
        x = centers[y] + rng.standard_normal((n, spec.dim))
    else:
        s = spec.image_size
        grid = np.arange(s)
        yy, xx = np.meshgrid(grid, grid, indexing="ij")
        # one Gaussian bump per class at a class-specific position and width
        cy = rng.uniform(s * 0.2, s * 0.8, spec.n_classes)
        cx = rng.uniform(s * 0.2, s * 0.8, spec.n_classes)
        width = rng.uniform(s * 0.08, s * 0.2, spec.n_classes)
        bumps = np.exp(
            -((yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2)
            / (2 * width[:, None, None] ** 2)
        )
        x = spec.separation * bumps[y] + rng.standard_normal((n, s, s))
        x = x[:, None, :, :]
    order = rng.permutation(n)
    return LabeledDataset(
        x=x[order].astype(np.float32),
        y=y[order].astype(np.int64),
        ids=np.arange(n, dtype=np.int64),
        n_classes=spec.n_classes,
    )


def load_csv_dataset(path: str, n_classes: int | None = None) -> LabeledDataset:
    """CSV rows are feature columns followed by one integer label column."""
    raw = np.genfromtxt(path, delimiter=",", dtype=np.float64)
    if raw.ndim == 1:
        raw = raw[None]
    x = raw[:, :-1].astype(np.float32)
    y = raw[:, -1].astype(np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    return LabeledDataset(x, y, np.arange(len(y), dtype=np.int64), n_classes)


@dataclass(frozen=True)
class PartitionSpec:
    """Sizes of the experiment roles. ``overlap`` controls whether the
    adversary pool and the target pool share records."""

    n_validation: int  # size of each of V1, V2
    aux_size: int  # adversary pool |D_A|
    target_pool_size: int  # |D_target|
    train_size: int  # |D_T|, also the size of every shadow training set
    n_shadows: int  # K
    overlap: str = "disjoint"  # 'disjoint' | 'identical'
    mc_train: int = 0  # meta-classifier train/val/test record counts
    mc_val: int = 0
    mc_test: int = 0

    def __post_init__(self):
        if self.overlap not in ("disjoint", "identical"):
            raise ConfigError(f"overlap must be disjoint or identical, got {self.overlap!r}")
        if self.overlap == "identical" and self.aux_size != self.target_pool_size:
            raise ConfigError("identical pools require aux_size == target_pool_size")


@dataclass
class Splits:
    """Index arrays into the source dataset (positions, not ids)."""

    v1: np.ndarray
    v2: np.ndarray
    aux: np.ndarray  # D_A
    target_pool: np.ndarray  # D_target
    target_train: np.ndarray  # D_T, subset of target_pool
    shadow_train: list = field(default_factory=list)  # K subsets of aux


def make_splits(dataset: LabeledDataset, spec: PartitionSpec, rng: np.random.Generator) -> Splits:
    n = len(dataset)
    pools_needed = (
        spec.aux_size + spec.target_pool_size
        if spec.overlap == "disjoint"
        else spec.aux_size
    )
    needed = 2 * spec.n_validation + pools_needed
    if needed > n:
        raise ConfigError(f"partition needs {needed} records, dataset has {n}")
    if spec.train_size > spec.target_pool_size or spec.train_size > spec.aux_size:
        raise ConfigError("train_size exceeds a pool size")
    order = rng.permutation(n)
    v1 = order[: spec.n_validation]
    v2 = order[spec.n_validation : 2 * spec.n_validation]
    rest = order[2 * spec.n_validation :]
    if spec.overlap == "disjoint":
        aux = rest[: spec.aux_size]
        target_pool = rest[spec.aux_size : spec.aux_size + spec.target_pool_size]
    else:
        aux = rest[: spec.aux_size]
        target_pool = aux
    target_train = np.sort(rng.choice(target_pool, size=spec.train_size, replace=False))
    shadow_train = [
        np.sort(rng.choice(aux, size=spec.train_size, replace=False))
        for _ in range(spec.n_shadows)
    ]
    return Splits(v1, v2, aux, target_pool, target_train, shadow_train)


def membership_labels(ids: np.ndarray, member_ids: np.ndarray) -> np.ndarray:
    """Indicator of membership, 1 for ids present in ``member_ids``."""
    return np.isin(ids, member_ids).astype(np.int8)
