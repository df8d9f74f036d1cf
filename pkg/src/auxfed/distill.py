"""Server-side student distillation against aggregated soft labels."""

from dataclasses import dataclass

import numpy as np

from . import numeric, rng as rngmod
from .aggregation import SoftLabelBatch
from .data import Dataset
from .errors import ConfigError, DimensionError
from .models import Model


@dataclass(frozen=True)
class DistillConfig:
    epochs: int = 1
    batch_size: int = 128
    learning_rate: float = 5e-5
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")


def distill_step(
    student: Model,
    batch: np.ndarray,
    teacher: SoftLabelBatch,
    opt: numeric.OptimizerState,
):
    """One optimizer step on KL(teacher || student softmax) over one batch.

    Returns (updated model, updated optimizer state, pre-step loss).
    """
    probs = teacher.probabilities
    if probs.shape[0] != np.asarray(batch).shape[0]:
        raise DimensionError(
            f"teacher rows {probs.shape[0]} do not match batch rows {len(batch)}"
        )
    params = student.flat_params
    loss, grad = numeric.mlp_forward_backward(
        student.prototype.full_arch, params, batch, probs, loss_kind=numeric.LOSS_KL
    )
    new_params, opt = numeric.optimizer_step(opt, params, grad)
    return student.with_flat_params(new_params), opt, loss


def distill(
    student: Model,
    distill_data: Dataset,
    teacher_labels: SoftLabelBatch,
    cfg: DistillConfig,
    return_mean_loss: bool = False,
    stream: tuple = (),
):
    """Run cfg.epochs of mini-batch distillation in a seed-deterministic order.

    teacher_labels must be row-aligned with distill_data; both are sliced by
    the same shuffled index stream each epoch.  stream tags (e.g. the round
    number) separate batch orders of repeated calls under one seed.
    """
    if len(teacher_labels) != len(distill_data):
        raise DimensionError(
            f"{len(teacher_labels)} teacher rows for {len(distill_data)} distill samples"
        )
    opt = numeric.make_optimizer(cfg.optimizer, cfg.learning_rate, student.flat_params.size)
    losses = []
    for epoch in range(cfg.epochs):
        order = rngmod.substream(cfg.seed, rngmod.DISTILL, *stream, epoch).permutation(
            len(distill_data)
        )
        for start in range(0, len(distill_data), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            student, opt, loss = distill_step(
                student, distill_data.features[idx], teacher_labels.subset(idx), opt
            )
            losses.append(loss)
    if return_mean_loss:
        mean_loss = float(np.mean(losses)) if losses else None
        return student, mean_loss
    return student
