"""Per-client certainty scoring with differentially private head release.

Each client fits a regularized logistic separator between its local features
and shared negative features (both scaled by the largest feature norm gamma).
The strongly convex objective has a unique minimizer whose sensitivity to
swapping one local sample is at most 2 / (lambda * N); Gaussian noise with
variance 8 ln(1.25/delta) / (eps^2 lambda^2 N^2) therefore makes the released
head (eps, delta)-differentially private.  Scores of public samples are
sigmoids of the head margin plus a small floor xi.
"""

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .errors import DimensionError, NumericError, ParameterError

DEFAULT_XI = 1e-8
GAMMA_FLOOR = 1e-12


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float = 0.1
    delta: float = 1e-5
    lam: float = 0.1  # l2 regularization strength of the separator objective
    xi: float = DEFAULT_XI

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ParameterError(f"delta must be in (0,1), got {self.delta}")
        if self.lam <= 0:
            raise ParameterError(f"lambda must be positive, got {self.lam}")
        if self.xi <= 0:
            raise ParameterError(f"xi must be positive, got {self.xi}")


@dataclass(frozen=True)
class ScoringHead:
    """Released scoring model: weights point toward the client's data region."""

    weights: np.ndarray
    gamma: float
    xi: float = DEFAULT_XI
    sanitized: bool = False
    sigma_sq: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.gamma <= 0:
            raise ParameterError("gamma must be positive")
        if self.sigma_sq < 0:
            raise ParameterError("sigma_sq must be >= 0")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    # log(1 + exp(z)) without overflow
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def compute_gamma(features_local: np.ndarray, features_negative: np.ndarray) -> float:
    """Largest row l2-norm over the union of local and negative features."""
    fl = np.atleast_2d(np.asarray(features_local, dtype=float))
    fn = np.atleast_2d(np.asarray(features_negative, dtype=float))
    total = (0 if fl.size == 0 else fl.shape[0]) + (0 if fn.size == 0 else fn.shape[0])
    if total == 0:
        raise ParameterError("cannot compute gamma of an empty feature union")
    norms = [np.linalg.norm(f, axis=1).max() for f in (fl, fn) if f.size]
    return max(float(max(norms)), GAMMA_FLOOR)


def erm_objective(w, features_local, features_negative, lam):
    """Separator objective: mean softplus of the signed margin plus l2 term.

    Local rows carry label +1, negative rows -1; the per-sample loss
    log(1 + exp(label * <w, x>)) grows with the margin, so the minimizer
    points away from the local data.
    """
    margins_l = features_local @ w
    margins_n = -(features_negative @ w)
    n = features_local.shape[0] + features_negative.shape[0]
    loss = (_softplus(margins_l).sum() + _softplus(margins_n).sum()) / n
    return float(loss + 0.5 * lam * (w @ w))


def erm_gradient(w, features_local, features_negative, lam):
    n = features_local.shape[0] + features_negative.shape[0]
    g = features_local.T @ _sigmoid(features_local @ w)
    g -= features_negative.T @ _sigmoid(-(features_negative @ w))
    return g / n + lam * w


def _erm_hessian(w, features_local, features_negative, lam):
    n = features_local.shape[0] + features_negative.shape[0]
    h = np.zeros((w.size, w.size))
    for feats, sign in ((features_local, 1.0), (features_negative, -1.0)):
        s = _sigmoid(sign * (feats @ w))
        h += (feats * (s * (1.0 - s))[:, None]).T @ feats
    return h / n + lam * np.eye(w.size)


def fit_scoring_head(
    features_local: np.ndarray,
    features_negative: np.ndarray,
    lam: float,
    max_steps: int = 1000,
    tol: float = 1e-8,
) -> np.ndarray:
    """Minimizer of the separator objective on gamma-normalized features.

    Damped Newton iteration; strong convexity (the l2 term) makes the
    minimizer unique and the Hessian uniformly positive definite.  Stops when
    the gradient norm drops below tol or after max_steps.
    """
    fl = np.atleast_2d(np.asarray(features_local, dtype=float))
    fn = np.atleast_2d(np.asarray(features_negative, dtype=float))
    if fl.size == 0 or fn.size == 0:
        raise ParameterError("both local and negative feature sets must be non-empty")
    if fl.shape[1] != fn.shape[1]:
        raise DimensionError(f"feature dims differ: {fl.shape[1]} vs {fn.shape[1]}")
    if not (np.all(np.isfinite(fl)) and np.all(np.isfinite(fn))):
        raise NumericError("non-finite features passed to fit_scoring_head")
    if lam <= 0:
        raise ParameterError(f"lambda must be positive, got {lam}")

    w = np.zeros(fl.shape[1])
    value = erm_objective(w, fl, fn, lam)
    for _ in range(max_steps):
        grad = erm_gradient(w, fl, fn, lam)
        gnorm = np.linalg.norm(grad)
        if gnorm <= tol:
            break
        step = np.linalg.solve(_erm_hessian(w, fl, fn, lam), grad)
        t = 1.0
        descent = grad @ step
        while t > 1e-12:
            candidate = w - t * step
            cand_value = erm_objective(candidate, fl, fn, lam)
            if cand_value <= value - 1e-4 * t * descent:
                break
            t *= 0.5
        w = w - t * step
        value = erm_objective(w, fl, fn, lam)
    return w


def sensitivity_bound(lam: float, n_local: int, n_negative: int) -> float:
    """Worst-case l2 change of the fitted head when one local sample swaps."""
    if n_local < 1 or n_negative < 1:
        raise ParameterError("counts must be >= 1")
    if lam <= 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    return 2.0 / (lam * (n_local + n_negative))


def compute_sigma_sq(pp: PrivacyParams, n_local: int, n_negative: int) -> float:
    """Gaussian noise variance calibrated to the separator's sensitivity."""
    if n_local < 1 or n_negative < 1:
        raise ParameterError("counts must be >= 1")
    n = n_local + n_negative
    return 8.0 * np.log(1.25 / pp.delta) / (pp.epsilon**2 * pp.lam**2 * n**2)


def sanitize_head(
    weights: np.ndarray, sigma_sq: float, seed: int, stream: tuple = ()
) -> np.ndarray:
    """Add seeded isotropic Gaussian noise with the given variance."""
    weights = np.asarray(weights, dtype=float)
    if sigma_sq < 0:
        raise ParameterError(f"sigma_sq must be >= 0, got {sigma_sq}")
    rng = rngmod.substream(seed, rngmod.SANITIZE, *stream)
    return weights + np.sqrt(sigma_sq) * rng.standard_normal(weights.shape)


def prepare_scoring_head(
    features_local: np.ndarray,
    features_negative: np.ndarray,
    privacy: PrivacyParams,
    seed: int,
    sanitize: bool = True,
    max_steps: int = 1000,
    tol: float = 1e-8,
    stream: tuple = (),
) -> ScoringHead:
    """Full per-client pipeline: normalize, fit, sanitize, orient.

    The fitted minimizer points away from local data (the training loss grows
    with the margin), so the released head stores its negation: positive
    margins then mean "looks like this client's data".
    """
    fl = np.atleast_2d(np.asarray(features_local, dtype=float))
    fn = np.atleast_2d(np.asarray(features_negative, dtype=float))
    gamma = compute_gamma(fl, fn)
    w_star = fit_scoring_head(fl / gamma, fn / gamma, privacy.lam, max_steps, tol)
    sigma_sq = compute_sigma_sq(privacy, fl.shape[0], fn.shape[0]) if sanitize else 0.0
    released = sanitize_head(w_star, sigma_sq, seed, stream)
    return ScoringHead(
        weights=-released,
        gamma=gamma,
        xi=privacy.xi,
        sanitized=sanitize,
        sigma_sq=sigma_sq,
    )


def score(head: ScoringHead, features: np.ndarray) -> np.ndarray:
    """Certainty scores in (xi, 1 + xi) for gamma-normalized feature rows."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.shape[1] != head.weights.shape[0]:
        raise DimensionError(
            f"features have dim {features.shape[1]}, head expects {head.weights.shape[0]}"
        )
    margins = (features / head.gamma) @ head.weights
    return _sigmoid(margins) + head.xi
