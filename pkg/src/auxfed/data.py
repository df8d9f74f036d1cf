"""Datasets, Dirichlet non-iid partitioning, and the auxiliary data split."""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng as rngmod
from .errors import ParameterError, ParseError, PartitionError

STANDARDIZE_ITERATIONS = 1000


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus optional integer labels (absent for auxiliary data)."""

    features: np.ndarray  # (n_samples, n_dims)
    labels: Optional[np.ndarray] = None  # (n_samples,) ints in [0, num_classes)
    num_classes: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
        if self.features.ndim != 2:
            raise ParameterError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=int)
            if labels.shape != (self.features.shape[0],):
                raise ParameterError(
                    f"labels length {labels.shape} does not match {self.features.shape[0]} rows"
                )
            object.__setattr__(self, "labels", labels)
            if self.num_classes is None:
                object.__setattr__(self, "num_classes", int(labels.max()) + 1 if labels.size else 0)
            elif labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise ParameterError(
                    f"labels outside [0, {self.num_classes}): min={labels.min()}, max={labels.max()}"
                )

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_dims(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        labels = self.labels[indices] if self.labels is not None else None
        return Dataset(self.features[indices], labels, self.num_classes)

    def one_hot_labels(self) -> np.ndarray:
        if self.labels is None:
            raise ParameterError("dataset is unlabeled")
        out = np.zeros((len(self), self.num_classes))
        out[np.arange(len(self)), self.labels] = 1.0
        return out


@dataclass(frozen=True)
class PartitionPlan:
    """Per-sample client assignment produced by dirichlet_partition."""

    assignments: np.ndarray  # (n_samples,) client index
    n_clients: int
    alpha: float
    seed: int

    def client_indices(self, client: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == client)


def _standardize(p: np.ndarray) -> np.ndarray:
    """Alternating column/row normalization, columns first, fixed iteration count."""
    p = p.copy()
    for _ in range(STANDARDIZE_ITERATIONS):
        p /= p.sum(axis=0, keepdims=True)
        p /= p.sum(axis=1, keepdims=True)
    return p


def _largest_remainder_counts(fractions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing exactly to total, proportional to fractions."""
    target = fractions / fractions.sum() * total
    counts = np.floor(target).astype(int)
    residual = target - counts
    missing = total - counts.sum()
    # ties broken toward lower client index for determinism
    order = np.lexsort((np.arange(len(fractions)), -residual))
    counts[order[:missing]] += 1
    return counts


def dirichlet_partition(
    labels: np.ndarray, n_clients: int, alpha: float, seed: int
) -> PartitionPlan:
    """Assign each sample to one client, heterogeneity controlled by alpha.

    One Dirichlet(alpha) vector over clients is drawn per class; the stacked
    (clients x classes) matrix is balanced by alternating column/row
    normalization for a fixed number of iterations, then per-class sample
    counts are materialized with largest-remainder rounding so every class is
    conserved exactly.
    """
    labels = np.asarray(labels, dtype=int)
    if n_clients < 1:
        raise ParameterError(f"n_clients must be >= 1, got {n_clients}")
    if alpha <= 0:
        raise ParameterError(f"alpha must be > 0, got {alpha}")
    n_classes = int(labels.max()) + 1 if labels.size else 0
    if n_classes == 0:
        raise PartitionError("no samples to partition")
    class_counts = np.bincount(labels, minlength=n_classes)
    if np.any(class_counts == 0):
        empty = np.flatnonzero(class_counts == 0)
        raise PartitionError(f"classes without samples: {empty.tolist()}")

    rng = rngmod.substream(seed, rngmod.PARTITION)
    p = rng.dirichlet(np.full(n_clients, alpha), size=n_classes).T  # (clients, classes)
    p = np.maximum(p, 1e-300)  # degenerate Dirichlet draws can underflow to 0
    p = _standardize(p)

    assignments = np.full(labels.shape[0], -1, dtype=int)
    for cls in range(n_classes):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        counts = _largest_remainder_counts(p[:, cls], len(idx))
        start = 0
        for client, cnt in enumerate(counts):
            assignments[idx[start : start + cnt]] = client
            start += cnt
    return PartitionPlan(assignments=assignments, n_clients=n_clients, alpha=alpha, seed=seed)


def client_shards(dataset: Dataset, plan: PartitionPlan):
    """Materialize the per-client datasets of a partition plan."""
    return [dataset.subset(plan.client_indices(i)) for i in range(plan.n_clients)]


def split_auxiliary(aux: Dataset, distill_fraction: float, seed: int):
    """Random disjoint split of the auxiliary data into (negatives, distill)."""
    if not 0.0 < distill_fraction < 1.0:
        raise ParameterError(f"distill_fraction must be in (0,1), got {distill_fraction}")
    if len(aux) == 0:
        raise ParameterError("auxiliary dataset is empty")
    rng = rngmod.substream(seed, rngmod.AUX_SPLIT)
    perm = rng.permutation(len(aux))
    n_distill = int(round(distill_fraction * len(aux)))
    distill_idx = np.sort(perm[:n_distill])
    negative_idx = np.sort(perm[n_distill:])
    return aux.subset(negative_idx), aux.subset(distill_idx)


# ---------------------------------------------------------------------------
# CSV loading / saving
# ---------------------------------------------------------------------------


def load_csv(path, num_classes: Optional[int] = None) -> Dataset:
    """Load a dataset from CSV with header "label,f0,f1,..." or "f0,f1,..."."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        labeled = header[0] == "label"
        n_features = len(header) - (1 if labeled else 0)
        if n_features < 1:
            raise ParseError(f"{path}: header declares no feature columns")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: line {lineno}: expected {len(header)} cells, got {len(row)}"
                )
            try:
                values = [float(c) for c in row]
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: non-numeric cell ({exc})") from None
            if labeled:
                if values[0] != int(values[0]):
                    raise ParseError(f"{path}: line {lineno}: non-integer label {row[0]}")
                labels.append(int(values[0]))
                feats.append(values[1:])
            else:
                feats.append(values)
        features = np.asarray(feats, dtype=float).reshape(len(feats), n_features)
    if labeled:
        labels = np.asarray(labels, dtype=int)
        declared = num_classes if num_classes is not None else int(labels.max()) + 1
        bad = np.flatnonzero((labels < 0) | (labels >= declared))
        if bad.size:
            raise ParseError(
                f"{path}: line {bad[0] + 2}: label {labels[bad[0]]} outside [0, {declared})"
            )
        return Dataset(features, labels, declared)
    return Dataset(features, None, num_classes)


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        cols = [f"f{i}" for i in range(dataset.n_dims)]
        if dataset.labels is not None:
            writer.writerow(["label"] + cols)
            for label, row in zip(dataset.labels, dataset.features):
                writer.writerow([int(label)] + [repr(v) for v in row])
        else:
            writer.writerow(cols)
            for row in dataset.features:
                writer.writerow([repr(v) for v in row])


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------


def gaussian_blobs(
    n: int,
    centers: np.ndarray,
    sigma: float = 0.5,
    seed: int = 0,
    labeled: bool = True,
) -> Dataset:
    """Equal-sized isotropic Gaussian clusters around the given centers.

    n must be divisible by the number of centers so classes come out exactly
    balanced.
    """
    centers = np.asarray(centers, dtype=float)
    k = centers.shape[0]
    if n % k != 0:
        raise ParameterError(f"n={n} not divisible by {k} centers")
    rng = rngmod.substream(seed, rngmod.SYNTH_DATA)
    per = n // k
    feats = np.concatenate(
        [c + sigma * rng.standard_normal((per, centers.shape[1])) for c in centers]
    )
    labels = np.repeat(np.arange(k), per)
    perm = rng.permutation(n)
    ds = Dataset(feats[perm], labels[perm] if labeled else None, k if labeled else None)
    return ds


def ring_of_blobs(
    n: int, n_classes: int, radius: float = 5.0, sigma: float = 0.5, seed: int = 0,
    labeled: bool = True,
) -> Dataset:
    """Gaussian blobs with centers evenly spaced on a circle."""
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return gaussian_blobs(n, centers, sigma=sigma, seed=seed, labeled=labeled)


def two_moons(n: int, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Two interleaving half circles, the classic binary toy."""
    if n % 2 != 0:
        raise ParameterError(f"n={n} must be even")
    rng = rngmod.substream(seed, rngmod.SYNTH_DATA)
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    feats = np.concatenate([upper, lower]) + noise * rng.standard_normal((n, 2))
    labels = np.concatenate([np.zeros(half, dtype=int), np.ones(half, dtype=int)])
    perm = rng.permutation(n)
    return Dataset(feats[perm], labels[perm], 2)


# Rough 2-D layout of the classic three-species flower data after projection:
# one well-separated cluster and two adjacent ones.
_IRIS_LIKE_CENTERS = np.array([[-2.8, 0.4], [0.5, -0.3], [1.9, 0.2]])
_IRIS_LIKE_SIGMAS = np.array([0.35, 0.45, 0.5])


def iris_like(n: int, seed: int = 0) -> Dataset:
    """Three-class 2-D toy with one separated and two overlapping classes."""
    if n % 3 != 0:
        raise ParameterError(f"n={n} not divisible by 3")
    rng = rngmod.substream(seed, rngmod.SYNTH_DATA)
    per = n // 3
    feats = np.concatenate(
        [
            c + s * rng.standard_normal((per, 2))
            for c, s in zip(_IRIS_LIKE_CENTERS, _IRIS_LIKE_SIGMAS)
        ]
    )
    labels = np.repeat(np.arange(3), per)
    perm = rng.permutation(n)
    return Dataset(feats[perm], labels[perm], 3)


def generate_synthetic(kind: str, n: int, seed: int = 0, **kwargs) -> Dataset:
    """Dispatch by generator name as it appears in run configs."""
    if kind == "gaussian_blobs":
        if "centers" in kwargs:
            return gaussian_blobs(n, seed=seed, **kwargs)
        n_classes = kwargs.pop("n_classes", 10)
        return ring_of_blobs(n, n_classes, seed=seed, **kwargs)
    if kind == "two_moons":
        return two_moons(n, seed=seed, **kwargs)
    if kind == "iris_like":
        return iris_like(n, seed=seed)
    raise ParameterError(f"unknown synthetic dataset kind {kind!r}")
