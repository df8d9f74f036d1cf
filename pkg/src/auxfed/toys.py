"""Seeded 2-D toys: score/density agreement and weighted-vs-mean ensembles.

Both toys drive the real scoring pipeline (gamma normalization, regularized
separator fit, sigmoid scores) on small Gaussian data where ground truth is
known in closed form.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numeric, rng as rngmod
from .aggregation import aggregate_mean, aggregate_weighted
from .data import Dataset, iris_like, split_auxiliary
from .errors import ParameterError
from .scoring import PrivacyParams, prepare_scoring_head, score


@dataclass(frozen=True)
class GaussianClientSpec:
    """One client's data-generating 2-D Gaussian."""

    mean: tuple
    sigma: float = 0.8  # isotropic std; cov overrides when given
    cov: Optional[tuple] = None

    def covariance(self) -> np.ndarray:
        if self.cov is None:
            return np.eye(2) * self.sigma**2
        c = np.asarray(self.cov, dtype=float)
        if c.shape != (2, 2):
            raise ParameterError(f"covariance must be 2x2, got {c.shape}")
        return c

    def pdf(self, points: np.ndarray) -> np.ndarray:
        cov = self.covariance()
        det = np.linalg.det(cov)
        if det <= 0 or not np.all(np.isfinite(cov)):
            raise ParameterError(f"degenerate covariance {cov.tolist()}")
        inv = np.linalg.inv(cov)
        d = points - np.asarray(self.mean, dtype=float)
        quad = np.einsum("ni,ij,nj->n", d, inv, d)
        return np.exp(-0.5 * quad) / (2.0 * np.pi * np.sqrt(det))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        cov = self.covariance()
        if np.linalg.det(cov) <= 0:
            raise ParameterError(f"degenerate covariance {cov.tolist()}")
        return rng.multivariate_normal(np.asarray(self.mean, dtype=float), cov, size=n)


@dataclass(frozen=True)
class DensityToySpec:
    """Clients as known Gaussians, shared uniform negatives, evaluation grid."""

    clients: tuple
    n_local: int = 150
    n_negative: int = 300
    negative_box: float = 6.0  # negatives uniform on [-box, box]^2
    grid_lo: float = -5.0
    grid_hi: float = 5.0
    grid_n: int = 41
    rbf_grid: int = 5  # anchor layout: rbf_grid x rbf_grid over the box
    rbf_bandwidth: float = 2.5
    lam: float = 1e-3
    seed: int = 0


def default_density_spec(seed: int = 0) -> DensityToySpec:
    """The fixed 3-client spread-Gaussian spec used by the test suite."""
    return DensityToySpec(
        clients=(
            GaussianClientSpec(mean=(3.0, 0.0)),
            GaussianClientSpec(mean=(-1.5, 2.6)),
            GaussianClientSpec(mean=(-1.5, -2.6)),
        ),
        seed=seed,
    )


def _rbf_features(points: np.ndarray, centers: np.ndarray, bandwidth: float) -> np.ndarray:
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-d2 / (2.0 * bandwidth**2))


@dataclass
class DensityReport:
    grid: np.ndarray  # (points, 2)
    normalized_scores: np.ndarray  # (clients, points)
    density_ratios: np.ndarray  # (clients, points)
    correlations: list  # per-client Pearson r (nan when a field is constant)


def density_report(
    spec: DensityToySpec,
    sanitize: bool = False,
    privacy: Optional[PrivacyParams] = None,
) -> DensityReport:
    """Normalized certainty scores vs true density ratios on a grid.

    Each client fits a scoring head on radial-basis features of its samples
    against shared uniform negatives; the report compares the resulting
    normalized score field with the clients' true density-ratio field.
    """
    if not spec.clients:
        raise ParameterError("density toy needs at least one client")
    rng = rngmod.substream(spec.seed, rngmod.TOY, 0)
    locals_ = [c.sample(spec.n_local, rng) for c in spec.clients]
    negatives = rng.uniform(-spec.negative_box, spec.negative_box, size=(spec.n_negative, 2))

    anchor_axis = np.linspace(-spec.negative_box + 0.5, spec.negative_box - 0.5, spec.rbf_grid)
    centers = np.stack(np.meshgrid(anchor_axis, anchor_axis), axis=-1).reshape(-1, 2)
    feats = lambda pts: _rbf_features(pts, centers, spec.rbf_bandwidth)

    axis = np.linspace(spec.grid_lo, spec.grid_hi, spec.grid_n)
    grid = np.stack(np.meshgrid(axis, axis), axis=-1).reshape(-1, 2)

    pp = privacy if privacy is not None else PrivacyParams(lam=spec.lam)
    neg_feats = feats(negatives)
    grid_feats = feats(grid)
    score_rows = []
    for i, local in enumerate(locals_):
        head = prepare_scoring_head(
            feats(local), neg_feats, pp, seed=spec.seed, sanitize=sanitize, stream=(i,)
        )
        score_rows.append(score(head, grid_feats))
    scores = np.stack(score_rows)
    normalized_scores = scores / scores.sum(axis=0)

    densities = np.stack([c.pdf(grid) for c in spec.clients])
    density_ratios = densities / np.maximum(densities.sum(axis=0), 1e-300)

    correlations = []
    for i in range(len(spec.clients)):
        a, b = normalized_scores[i], density_ratios[i]
        if a.std() < 1e-15 or b.std() < 1e-15:
            correlations.append(float("nan"))
        else:
            correlations.append(float(np.corrcoef(a, b)[0, 1]))
    return DensityReport(grid, normalized_scores, density_ratios, correlations)


# ---------------------------------------------------------------------------
# Weighted vs mean ensembles on single-class linear experts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleToyConfig:
    shard_sizes: tuple = (40, 150, 150)  # one class per client, unequal sizes
    n_test: int = 300
    n_aux: int = 450
    epochs: int = 30
    learning_rate: float = 0.05
    batch_size: int = 32
    lam: float = 0.01


@dataclass(frozen=True)
class EnsembleToyOutcome:
    weighted_accuracy: float
    mean_accuracy: float


def _train_linear_expert(shard: Dataset, n_classes: int, seed: int, cfg: EnsembleToyConfig):
    arch = numeric.MlpArchitecture((2, n_classes), (numeric.ACT_IDENTITY,))
    params = np.zeros(arch.n_params)
    opt = numeric.make_optimizer("adam", cfg.learning_rate, params.size)
    targets = np.zeros((len(shard), n_classes))
    targets[np.arange(len(shard)), shard.labels] = 1.0
    for epoch in range(cfg.epochs):
        order = rngmod.substream(seed, rngmod.TOY, 1, epoch).permutation(len(shard))
        for start in range(0, len(shard), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grad = numeric.mlp_forward_backward(arch, params, shard.features[idx], targets[idx])
            params, opt = numeric.optimizer_step(opt, params, grad)
    return params, arch


def weighted_vs_mean_toy(seed: int, cfg: EnsembleToyConfig = EnsembleToyConfig()) -> EnsembleToyOutcome:
    """Three single-class linear experts on overlapping 2-D data.

    The smallest client's expert saturates on its lone class, so the plain
    logit mean misassigns large regions; certainty weighting recovers the
    regional experts.  Returns test accuracy of both aggregation rules.
    """
    n_classes = 3
    pool = iris_like(3 * max(cfg.shard_sizes) * 2, seed=seed)
    test = iris_like(cfg.n_test, seed=seed + 7001)
    aux = Dataset(iris_like(cfg.n_aux, seed=seed + 9001).features)

    shards = []
    for cls, size in enumerate(cfg.shard_sizes):
        idx = np.flatnonzero(pool.labels == cls)[:size]
        shards.append(pool.subset(idx))
    negatives, _ = split_auxiliary(aux, 0.8, seed)

    logits, scores = [], []
    for i, shard in enumerate(shards):
        params, arch = _train_linear_expert(shard, n_classes, seed * 31 + i, cfg)
        logits.append(numeric.forward(arch, params, test.features))
        head = prepare_scoring_head(
            shard.features,
            negatives.features,
            PrivacyParams(lam=cfg.lam),
            seed=seed,
            sanitize=False,
            stream=(i,),
        )
        scores.append(score(head, test.features))

    accuracy = lambda probs: float(np.mean(probs.argmax(axis=1) == test.labels))
    return EnsembleToyOutcome(
        weighted_accuracy=accuracy(aggregate_weighted(logits, scores).probabilities),
        mean_accuracy=accuracy(aggregate_mean(logits).probabilities),
    )
