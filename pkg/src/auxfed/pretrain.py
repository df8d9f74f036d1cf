"""Self-supervised pre-training of feature extractors on unlabeled data.

Two desk-scale objectives: reconstruct a clean input from a noise-corrupted
one through the extractor plus a linear reconstruction head, or pull together
two noise-augmented views of the same sample with a normalized-temperature
contrastive loss.  Only the extractor parameters are returned; any auxiliary
head is discarded.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import numeric, rng as rngmod
from .data import Dataset
from .errors import ConfigError, DimensionError, ParameterError
from .models import ModelPrototype

log = logging.getLogger(__name__)

OBJECTIVE_DENOISING = "denoising_reconstruction"
OBJECTIVE_CONTRASTIVE = "contrastive_pairs"


@dataclass(frozen=True)
class PretrainConfig:
    objective: str = OBJECTIVE_DENOISING
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    noise_sigma: float = 0.5
    temperature: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.objective not in (OBJECTIVE_DENOISING, OBJECTIVE_CONTRASTIVE):
            raise ConfigError(f"unknown pretraining objective {self.objective!r}")
        if self.objective == OBJECTIVE_CONTRASTIVE and self.batch_size < 2:
            raise ConfigError("contrastive pretraining needs batch_size >= 2")
        if self.learning_rate <= 0 or self.temperature <= 0:
            raise ConfigError("learning_rate and temperature must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")


def _stable_logsumexp(rows: np.ndarray) -> np.ndarray:
    m = rows.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(rows - m).sum(axis=1, keepdims=True)))[:, 0]


def _ntxent_loss_and_feature_grad(fa: np.ndarray, fb: np.ndarray, temperature: float):
    """Contrastive loss over paired feature rows; gradient w.r.t. raw features.

    Rows are cosine-normalized internally; row i of fa is the positive of row
    i of fb and every other row of either view is a negative.
    """
    if fa.shape != fb.shape:
        raise DimensionError(f"feature shapes differ: {fa.shape} vs {fb.shape}")
    n = fa.shape[0]
    if n < 2:
        raise ParameterError("contrastive loss needs at least two pairs")
    f = np.concatenate([fa, fb])
    norms = np.maximum(np.linalg.norm(f, axis=1, keepdims=True), 1e-12)
    z = f / norms
    sim = (z @ z.T) / temperature
    np.fill_diagonal(sim, -np.inf)
    pos = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    lse = _stable_logsumexp(sim)
    loss = float(np.mean(lse - sim[np.arange(2 * n), pos]))

    # d(loss)/d(sim): softmax over each row minus the positive indicator
    p = np.exp(sim - lse[:, None])
    p[np.arange(2 * n), pos] -= 1.0
    p /= 2 * n
    dz = (p + p.T) @ z / temperature
    # through the row normalization: df = (dz - (dz.z) z) / ||f||
    df = (dz - (dz * z).sum(axis=1, keepdims=True) * z) / norms
    return loss, df[:n], df[n:]


def contrastive_loss(features_a: np.ndarray, features_b: np.ndarray, temperature: float) -> float:
    """Normalized-temperature contrastive loss between two paired views."""
    fa = np.asarray(features_a, dtype=float)
    fb = np.asarray(features_b, dtype=float)
    loss, _, _ = _ntxent_loss_and_feature_grad(fa, fb, temperature)
    return loss


def _denoising_arch(prototype: ModelPrototype) -> numeric.MlpArchitecture:
    # extractor followed by a linear reconstruction layer back to input space
    ext = prototype.extractor_arch
    return numeric.MlpArchitecture(
        dims=ext.dims + (prototype.input_dim,),
        activations=ext.activations + (numeric.ACT_IDENTITY,),
    )


def denoising_loss_and_grad(arch, params, clean: np.ndarray, corrupted: np.ndarray):
    """Mean squared reconstruction error and its flat parameter gradient."""
    out, cache = numeric.forward_with_cache(arch, params, corrupted)
    diff = out - clean
    loss = float((diff**2).mean())
    grad = numeric.backward_from_output_grad(arch, params, cache, 2.0 * diff / diff.size)
    return loss, grad


def contrastive_step_loss_and_grad(arch, params, batch, rng, noise_sigma, temperature):
    """Loss and parameter gradient for one two-view contrastive batch."""
    view_a = batch + noise_sigma * rng.standard_normal(batch.shape)
    view_b = batch + noise_sigma * rng.standard_normal(batch.shape)
    fa, cache_a = numeric.forward_with_cache(arch, params, view_a)
    fb, cache_b = numeric.forward_with_cache(arch, params, view_b)
    loss, dfa, dfb = _ntxent_loss_and_feature_grad(fa, fb, temperature)
    grad = numeric.backward_from_output_grad(arch, params, cache_a, dfa)
    grad = grad + numeric.backward_from_output_grad(arch, params, cache_b, dfb)
    return loss, grad


def train_feature_extractor(
    prototype: ModelPrototype,
    aux: Dataset,
    cfg: PretrainConfig,
    return_history: bool = False,
):
    """Train the prototype's extractor on unlabeled data; returns its params.

    With epochs=0 the seeded initialization is returned unchanged (it is the
    same initialization init_model would produce for cfg.seed).
    """
    if len(aux) == 0:
        raise ParameterError("pretraining data is empty")
    if aux.n_dims != prototype.input_dim:
        raise DimensionError(
            f"pretraining data has {aux.n_dims} dims, prototype expects {prototype.input_dim}"
        )
    proto_tag = rngmod.tag_for(prototype.id)
    init_rng = rngmod.substream(cfg.seed, rngmod.MODEL_INIT, proto_tag)
    n_ext = prototype.n_extractor_params

    if cfg.objective == OBJECTIVE_DENOISING:
        arch = _denoising_arch(prototype)
        params = np.concatenate(
            [
                numeric.init_params(prototype.extractor_arch, init_rng),
                numeric.init_params(
                    numeric.MlpArchitecture(
                        (prototype.feature_dim, prototype.input_dim), (numeric.ACT_IDENTITY,)
                    ),
                    rngmod.substream(cfg.seed, rngmod.PRETRAIN, proto_tag, 0),
                ),
            ]
        )
    else:
        arch = prototype.extractor_arch
        params = numeric.init_params(arch, init_rng)

    history = []
    opt = numeric.make_optimizer("adam", cfg.learning_rate, params.size)
    x = aux.features
    for epoch in range(cfg.epochs):
        erng = rngmod.substream(cfg.seed, rngmod.PRETRAIN, proto_tag, 1 + epoch)
        order = erng.permutation(len(aux))
        losses = []
        for start in range(0, len(aux), cfg.batch_size):
            batch = x[order[start : start + cfg.batch_size]]
            if cfg.objective == OBJECTIVE_DENOISING:
                corrupted = batch + cfg.noise_sigma * erng.standard_normal(batch.shape)
                loss, grad = denoising_loss_and_grad(arch, params, batch, corrupted)
            else:
                if batch.shape[0] < 2:
                    continue  # a lone sample has no in-batch negatives
                loss, grad = contrastive_step_loss_and_grad(
                    arch, params, batch, erng, cfg.noise_sigma, cfg.temperature
                )
            params, opt = numeric.optimizer_step(opt, params, grad)
            losses.append(loss)
        epoch_loss = float(np.mean(losses)) if losses else float("nan")
        history.append(epoch_loss)
        log.info("pretrain %s epoch %d/%d loss %.6f", prototype.id, epoch + 1, cfg.epochs, epoch_loss)

    extractor = params[:n_ext]
    if return_history:
        return extractor, history
    return extractor
