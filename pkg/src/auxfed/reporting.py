"""Round records, JSONL metrics, and the nearest-neighbor privacy audit."""

import csv
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, ParameterError

# wall_ms is measured, so it is kept out of the serialized record: metrics
# files must be byte-identical across same-seed runs.
_JSON_FIELDS = ("round", "method", "alpha", "seed", "accuracy", "mean_distill_loss")


@dataclass(frozen=True)
class RoundRecord:
    round: int
    method: str
    alpha: Optional[float]
    seed: int
    accuracy: float
    mean_distill_loss: Optional[float] = None
    wall_ms: int = 0

    def to_json_line(self) -> str:
        return json.dumps({k: getattr(self, k) for k in _JSON_FIELDS})

    @classmethod
    def from_json_line(cls, line: str) -> "RoundRecord":
        d = json.loads(line)
        return cls(**{k: d[k] for k in _JSON_FIELDS})


def write_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json_line() + "\n")


def read_jsonl(path):
    with open(path) as fh:
        return [RoundRecord.from_json_line(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Privacy audit: which public samples score highest, and what do they resemble
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditEntry:
    client_id: int
    distill_sample_index: int
    score: float
    neighbor_indices: tuple  # local sample indices, descending similarity
    similarities: tuple


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"cosine_similarity shape mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ParameterError("cosine similarity of a zero vector is undefined")
    return float(a @ b / (na * nb))


def _descending_with_index_ties(values: np.ndarray) -> np.ndarray:
    # stable order: by value descending, ties by ascending index
    return np.lexsort((np.arange(values.size), -values))


def audit_client(
    client_id: int,
    scores: np.ndarray,
    distill_features: np.ndarray,
    local_features: np.ndarray,
    top_samples: int = 5,
    k: int = 4,
):
    """Top-scored distill samples and their nearest local neighbors by cosine."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape[0] != distill_features.shape[0]:
        raise DimensionError("one score per distill sample required")
    d_norm = np.linalg.norm(distill_features, axis=1)
    l_norm = np.linalg.norm(local_features, axis=1)
    entries = []
    for sample_idx in _descending_with_index_ties(scores)[:top_samples]:
        denom = np.maximum(d_norm[sample_idx] * l_norm, 1e-300)
        sims = (local_features @ distill_features[sample_idx]) / denom
        order = _descending_with_index_ties(sims)[:k]
        entries.append(
            AuditEntry(
                client_id=client_id,
                distill_sample_index=int(sample_idx),
                score=float(scores[sample_idx]),
                neighbor_indices=tuple(int(i) for i in order),
                similarities=tuple(float(sims[i]) for i in order),
            )
        )
    return entries


def write_audit_csv(entries, path) -> None:
    """Long-format CSV: one row per (distill sample, neighbor) pair."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["client_id", "distill_sample_index", "score", "rank", "local_sample_index", "cosine_similarity"]
        )
        for e in entries:
            for rank, (idx, sim) in enumerate(zip(e.neighbor_indices, e.similarities)):
                writer.writerow(
                    [e.client_id, e.distill_sample_index, repr(e.score), rank, idx, repr(sim)]
                )


def write_scores_csv(score_maps: dict, path) -> None:
    """Certainty scores as (sample_index, client_id, score) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "client_id", "score"])
        for client_id in sorted(score_maps):
            for sample_index, value in enumerate(score_maps[client_id]):
                writer.writerow([sample_index, client_id, repr(float(value))])
