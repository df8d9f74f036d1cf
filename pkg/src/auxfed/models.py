"""Model prototypes: classifiers decomposed into feature extractor and linear head."""

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numeric, rng as rngmod
from .errors import DimensionError, ParameterError, PrototypeError

MODE_LOGITS = "logits"
MODE_FEATURES = "features"

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelPrototype:
    """Shape of one model family: extractor widths plus a single linear head."""

    id: str
    input_dim: int
    hidden_layers: tuple
    feature_dim: int
    num_classes: int
    feature_activation: str = numeric.ACT_RELU

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.feature_dim <= 0:
            raise ParameterError("feature_dim must be positive")
        if self.num_classes < 2:
            raise ParameterError("num_classes must be >= 2")

    @property
    def extractor_arch(self) -> numeric.MlpArchitecture:
        dims = (self.input_dim, *self.hidden_layers, self.feature_dim)
        acts = (numeric.ACT_RELU,) * len(self.hidden_layers) + (self.feature_activation,)
        return numeric.MlpArchitecture(dims=dims, activations=acts)

    @property
    def head_arch(self) -> numeric.MlpArchitecture:
        return numeric.MlpArchitecture(
            dims=(self.feature_dim, self.num_classes), activations=(numeric.ACT_IDENTITY,)
        )

    @property
    def full_arch(self) -> numeric.MlpArchitecture:
        dims = (self.input_dim, *self.hidden_layers, self.feature_dim, self.num_classes)
        acts = (
            (numeric.ACT_RELU,) * len(self.hidden_layers)
            + (self.feature_activation,)
            + (numeric.ACT_IDENTITY,)
        )
        return numeric.MlpArchitecture(dims=dims, activations=acts)

    @property
    def n_extractor_params(self) -> int:
        return self.extractor_arch.n_params

    @property
    def n_head_params(self) -> int:
        return self.head_arch.n_params


@dataclass(frozen=True)
class Model:
    """Parameter vectors bound to a prototype; forward is head(extractor(x))."""

    prototype: ModelPrototype
    extractor_params: np.ndarray
    head_params: np.ndarray

    def __post_init__(self):
        ep = np.asarray(self.extractor_params, dtype=float)
        hp = np.asarray(self.head_params, dtype=float)
        if ep.shape != (self.prototype.n_extractor_params,):
            raise DimensionError(
                f"extractor has {ep.size} params, prototype needs {self.prototype.n_extractor_params}"
            )
        if hp.shape != (self.prototype.n_head_params,):
            raise DimensionError(
                f"head has {hp.size} params, prototype needs {self.prototype.n_head_params}"
            )
        object.__setattr__(self, "extractor_params", ep)
        object.__setattr__(self, "head_params", hp)

    @property
    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.extractor_params, self.head_params])

    def with_flat_params(self, flat: np.ndarray) -> "Model":
        n_ext = self.prototype.n_extractor_params
        return Model(self.prototype, flat[:n_ext], flat[n_ext:])


def init_model(prototype: ModelPrototype, seed: int, head_init: str = "zeros") -> Model:
    """Seeded He-init extractor; head is zeros or seeded-random per head_init."""
    proto_tag = rngmod.tag_for(prototype.id)
    ext = numeric.init_params(prototype.extractor_arch, rngmod.substream(seed, rngmod.MODEL_INIT, proto_tag))
    if head_init == "zeros":
        head = np.zeros(prototype.n_head_params)
    elif head_init == "seeded-random":
        head = numeric.init_params(prototype.head_arch, rngmod.substream(seed, rngmod.HEAD_INIT, proto_tag))
    else:
        raise ParameterError(f"unknown head_init {head_init!r}")
    return Model(prototype, ext, head)


def forward(model: Model, batch: np.ndarray, mode: str = MODE_LOGITS) -> np.ndarray:
    """Feature or logit matrix for a batch; logits are exactly head(features)."""
    feats = numeric.forward(model.prototype.extractor_arch, model.extractor_params, batch)
    if mode == MODE_FEATURES:
        return feats
    if mode == MODE_LOGITS:
        return numeric.forward(model.prototype.head_arch, model.head_params, feats)
    raise ParameterError(f"unknown forward mode {mode!r}")


def average_parameters(weighted_models) -> Model:
    """Convex combination of same-prototype models, weights normalized to 1."""
    weighted_models = list(weighted_models)
    if not weighted_models:
        raise ParameterError("cannot average an empty model list")
    proto = weighted_models[0][0].prototype
    for m, w in weighted_models:
        if m.prototype != proto:
            raise PrototypeError(f"mixed prototypes: {m.prototype.id!r} vs {proto.id!r}")
        if w <= 0:
            raise ParameterError(f"averaging weight must be positive, got {w}")
    total = float(sum(w for _, w in weighted_models))
    ext = sum((w / total) * m.extractor_params for m, w in weighted_models)
    head = sum((w / total) * m.head_params for m, w in weighted_models)
    return Model(proto, ext, head)


def clone_with_extractor(
    model: Model, extractor_params: np.ndarray, head_init: str = "zeros", seed: int = 0
) -> Model:
    """New model sharing the prototype, given extractor, and a fresh head."""
    extractor_params = np.asarray(extractor_params, dtype=float)
    if extractor_params.shape != (model.prototype.n_extractor_params,):
        raise DimensionError(
            f"extractor params size {extractor_params.size} does not match prototype"
        )
    if head_init == "zeros":
        head = np.zeros(model.prototype.n_head_params)
    elif head_init == "seeded-random":
        head = numeric.init_params(
            model.prototype.head_arch,
            rngmod.substream(seed, rngmod.HEAD_INIT, rngmod.tag_for(model.prototype.id)),
        )
    else:
        raise ParameterError(f"unknown head_init {head_init!r}")
    return Model(model.prototype, extractor_params, head)


# ---------------------------------------------------------------------------
# Checkpoints (JSON; Python float repr round-trips exactly)
# ---------------------------------------------------------------------------


def prototype_to_dict(proto: ModelPrototype) -> dict:
    return {
        "id": proto.id,
        "input_dim": proto.input_dim,
        "hidden_layers": list(proto.hidden_layers),
        "feature_dim": proto.feature_dim,
        "num_classes": proto.num_classes,
        "feature_activation": proto.feature_activation,
    }


def prototype_from_dict(d: dict) -> ModelPrototype:
    return ModelPrototype(
        id=d["id"],
        input_dim=int(d["input_dim"]),
        hidden_layers=tuple(d["hidden_layers"]),
        feature_dim=int(d["feature_dim"]),
        num_classes=int(d["num_classes"]),
        feature_activation=d.get("feature_activation", numeric.ACT_RELU),
    )


def save_model(model: Model, path, extractor_only: bool = False) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "prototype": prototype_to_dict(model.prototype),
        "extractor_params": model.extractor_params.tolist(),
    }
    if not extractor_only:
        payload["head_params"] = model.head_params.tolist()
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_model(path, head_default: Optional[str] = "zeros") -> Model:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ParameterError(f"unsupported checkpoint version {payload.get('version')!r}")
    proto = prototype_from_dict(payload["prototype"])
    ext = np.asarray(payload["extractor_params"], dtype=float)
    if "head_params" in payload:
        head = np.asarray(payload["head_params"], dtype=float)
    elif head_default == "zeros":
        head = np.zeros(proto.n_head_params)
    else:
        raise ParameterError("checkpoint has no head parameters")
    return Model(proto, ext, head)
