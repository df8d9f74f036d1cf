"""Teacher-label construction from client logits: mean and certainty-weighted."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError, ScoreError
from .numeric import row_softmax


@dataclass(frozen=True)
class SoftLabelBatch:
    """Row-stochastic class probabilities used as distillation targets."""

    probabilities: np.ndarray  # (samples, classes)

    def __post_init__(self):
        object.__setattr__(self, "probabilities", np.asarray(self.probabilities, dtype=float))
        if self.probabilities.ndim != 2:
            raise DimensionError("probabilities must be 2-D")

    def __len__(self) -> int:
        return self.probabilities.shape[0]

    def subset(self, indices) -> "SoftLabelBatch":
        return SoftLabelBatch(self.probabilities[np.asarray(indices, dtype=int)])


def _check_logit_stack(logits_per_client) -> np.ndarray:
    logits = [np.asarray(l, dtype=float) for l in logits_per_client]
    if not logits:
        raise ParameterError("need at least one client's logits")
    shape = logits[0].shape
    for l in logits:
        if l.shape != shape or l.ndim != 2:
            raise DimensionError(f"client logit shapes differ: {l.shape} vs {shape}")
    return np.stack(logits)  # (clients, samples, classes)


def aggregate_mean(logits_per_client) -> SoftLabelBatch:
    """Softmax of the plain arithmetic mean of client logits."""
    stack = _check_logit_stack(logits_per_client)
    return SoftLabelBatch(row_softmax(stack.mean(axis=0)))


def aggregate_weighted(logits_per_client, scores_per_client) -> SoftLabelBatch:
    """Softmax of the per-sample score-weighted mean of client logits."""
    stack = _check_logit_stack(logits_per_client)
    scores = [np.asarray(s, dtype=float) for s in scores_per_client]
    if len(scores) != stack.shape[0]:
        raise DimensionError(
            f"{stack.shape[0]} logit sets but {len(scores)} score vectors"
        )
    for s in scores:
        if s.shape != (stack.shape[1],):
            raise DimensionError(f"score vector shape {s.shape}, expected ({stack.shape[1]},)")
        if np.any(s <= 0.0):
            raise ScoreError("scores must be strictly positive")
    weights = np.stack(scores)  # (clients, samples)
    mixed = (weights[:, :, None] * stack).sum(axis=0) / weights.sum(axis=0)[:, None]
    return SoftLabelBatch(row_softmax(mixed))
