"""End-to-end federated training: preparation phase, rounds, and baselines.

Methods: plain parameter averaging (fedavg), averaging with a proximal pull on
local objectives (fedprox), averaging plus mean-ensemble distillation (feddf),
and averaging plus certainty-weighted ensemble distillation seeded from
self-supervised pre-training (fedaux).  Any method can additionally start from
a pre-trained extractor ("+P" variants) via pretrained_init.
"""

import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from . import numeric, rng as rngmod
from .aggregation import aggregate_mean, aggregate_weighted
from .data import Dataset, split_auxiliary
from .distill import DistillConfig, distill
from .errors import ClientError, ConfigError
from .models import Model, ModelPrototype, forward, average_parameters, init_model
from .pretrain import PretrainConfig, train_feature_extractor
from .reporting import RoundRecord
from .scoring import PrivacyParams, ScoringHead, prepare_scoring_head, score

METHOD_FEDAVG = "fedavg"
METHOD_FEDPROX = "fedprox"
METHOD_FEDDF = "feddf"
METHOD_FEDAUX = "fedaux"
METHODS = (METHOD_FEDAVG, METHOD_FEDPROX, METHOD_FEDDF, METHOD_FEDAUX)

_DISTILLING_METHODS = (METHOD_FEDDF, METHOD_FEDAUX)


@dataclass(frozen=True)
class FederationConfig:
    method: str
    n_clients: int
    prototypes: tuple  # distinct ModelPrototype values
    prototype_map: tuple  # client index -> prototype id
    participation: float = 1.0
    rounds: int = 10
    local_epochs: int = 1
    local_lr: float = 1e-3
    local_batch_size: int = 32
    prox_mu: float = 0.0
    pretrained_init: bool = False
    linear_eval_only: bool = False
    sanitize_scores: bool = True
    privacy: PrivacyParams = field(default_factory=PrivacyParams)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    distill_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.n_clients < 1:
            raise ConfigError("n_clients must be >= 1")
        if not 0.0 < self.participation <= 1.0:
            raise ConfigError(f"participation must be in (0,1], got {self.participation}")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.local_epochs < 0:
            raise ConfigError("local_epochs must be >= 0")
        if self.local_lr <= 0 or self.local_batch_size < 1:
            raise ConfigError("local_lr must be positive and local_batch_size >= 1")
        if self.prox_mu < 0:
            raise ConfigError("prox_mu must be >= 0")
        if not 0.0 < self.distill_fraction < 1.0:
            raise ConfigError(f"distill_fraction must be in (0,1), got {self.distill_fraction}")
        if len(self.prototype_map) != self.n_clients:
            raise ConfigError(
                f"prototype_map has {len(self.prototype_map)} entries for {self.n_clients} clients"
            )
        ids = {p.id for p in self.prototypes}
        if len(ids) != len(self.prototypes):
            raise ConfigError("prototype ids must be unique")
        missing = set(self.prototype_map) - ids
        if missing:
            raise ConfigError(f"prototype_map references unknown prototypes {sorted(missing)}")

    @property
    def uses_distillation(self) -> bool:
        return self.method in _DISTILLING_METHODS

    @property
    def uses_pretraining(self) -> bool:
        # the certainty-weighted method always pre-trains; others only on "+P"
        return self.pretrained_init or self.method == METHOD_FEDAUX

    @property
    def needs_aux(self) -> bool:
        return self.uses_distillation or self.uses_pretraining

    @property
    def clients_per_round(self) -> int:
        return max(1, math.ceil(self.participation * self.n_clients))

    def prototype_by_id(self, proto_id: str) -> ModelPrototype:
        for p in self.prototypes:
            if p.id == proto_id:
                return p
        raise ConfigError(f"unknown prototype id {proto_id!r}")


@dataclass
class ClientState:
    id: int
    dataset: Dataset
    prototype_id: str
    scoring_head: Optional[ScoringHead] = None


@dataclass
class PreparationResult:
    negatives: Optional[Dataset] = None
    distill_data: Optional[Dataset] = None
    extractors: Dict[str, np.ndarray] = field(default_factory=dict)
    score_maps: Dict[int, np.ndarray] = field(default_factory=dict)


def run_preparation(cfg: FederationConfig, clients: List[ClientState], aux: Optional[Dataset]):
    """Aux split, per-prototype pre-training, and per-client scoring heads.

    Methods without auxiliary needs skip everything (aux may be absent).  The
    certainty-weighted method additionally fits, sanitizes, and evaluates one
    scoring head per client over the distillation data.
    """
    prep = PreparationResult()
    if not cfg.needs_aux:
        return prep
    if aux is None or len(aux) == 0:
        raise ConfigError(f"method {cfg.method!r} (pretrained_init={cfg.pretrained_init}) requires auxiliary data")
    prep.negatives, prep.distill_data = split_auxiliary(aux, cfg.distill_fraction, cfg.seed)

    proto_ids = sorted({c.prototype_id for c in clients})
    if cfg.uses_pretraining:
        pre_cfg = replace(cfg.pretrain, seed=cfg.seed)
        for proto_id in proto_ids:
            proto = cfg.prototype_by_id(proto_id)
            prep.extractors[proto_id] = train_feature_extractor(proto, aux, pre_cfg)

    if cfg.method == METHOD_FEDAUX:
        feature_models = {
            proto_id: Model(
                cfg.prototype_by_id(proto_id),
                prep.extractors[proto_id],
                np.zeros(cfg.prototype_by_id(proto_id).n_head_params),
            )
            for proto_id in proto_ids
        }
        neg_feats = {
            pid: forward(m, prep.negatives.features, mode="features")
            for pid, m in feature_models.items()
        }
        distill_feats = {
            pid: forward(m, prep.distill_data.features, mode="features")
            for pid, m in feature_models.items()
        }
        for client in clients:
            local_feats = forward(
                feature_models[client.prototype_id], client.dataset.features, mode="features"
            )
            head = prepare_scoring_head(
                local_feats,
                neg_feats[client.prototype_id],
                cfg.privacy,
                seed=cfg.seed,
                sanitize=cfg.sanitize_scores,
                stream=(client.id,),
            )
            client.scoring_head = head
            prep.score_maps[client.id] = score(head, distill_feats[client.prototype_id])
    return prep


def local_train(client: ClientState, init: Model, cfg: FederationConfig, round_t: int) -> Model:
    """E epochs of seeded mini-batch training from the downloaded model."""
    if init.prototype.id != client.prototype_id:
        raise ClientError(
            f"client {client.id} holds prototype {client.prototype_id!r}, got {init.prototype.id!r}"
        )
    if len(client.dataset) == 0:
        raise ClientError(f"client {client.id} has no local data")
    if client.dataset.labels is None:
        raise ClientError(f"client {client.id} dataset is unlabeled")

    arch = init.prototype.full_arch
    params = init.flat_params
    ref = params.copy()
    n_ext = init.prototype.n_extractor_params
    targets = np.zeros((len(client.dataset), init.prototype.num_classes))
    targets[np.arange(len(client.dataset)), client.dataset.labels] = 1.0
    x = client.dataset.features
    use_prox = cfg.method == METHOD_FEDPROX and cfg.prox_mu > 0

    opt = numeric.make_optimizer("adam", cfg.local_lr, params.size)
    for epoch in range(cfg.local_epochs):
        order = rngmod.substream(
            cfg.seed, rngmod.LOCAL_TRAIN, round_t, client.id, epoch
        ).permutation(len(client.dataset))
        for start in range(0, len(client.dataset), cfg.local_batch_size):
            idx = order[start : start + cfg.local_batch_size]
            if use_prox:
                _, grad = numeric.mlp_forward_backward(
                    arch, params, x[idx], targets[idx],
                    loss_kind=numeric.LOSS_PROXIMAL, prox_mu=cfg.prox_mu, prox_ref=ref,
                )
            else:
                _, grad = numeric.mlp_forward_backward(
                    arch, params, x[idx], targets[idx], loss_kind=numeric.LOSS_CROSS_ENTROPY
                )
            if cfg.linear_eval_only:
                grad[:n_ext] = 0.0  # extractor frozen: only the head moves
            params, opt = numeric.optimizer_step(opt, params, grad)
    return init.with_flat_params(params)


def select_clients(cfg: FederationConfig, round_t: int) -> np.ndarray:
    """Round-indexed, method-independent subset of client ids (ascending)."""
    rng = rngmod.substream(cfg.seed, rngmod.SELECTION, round_t)
    picked = rng.choice(cfg.n_clients, size=cfg.clients_per_round, replace=False)
    return np.sort(picked)


def run_round(
    round_t: int,
    global_models: Dict[str, Model],
    clients: List[ClientState],
    cfg: FederationConfig,
    prep: PreparationResult,
):
    """One communication round; returns (new global models, mean distill loss)."""
    selected = select_clients(cfg, round_t)
    if selected.size == 0:
        raise ConfigError("empty client selection")

    trained: Dict[int, Model] = {}
    for cid in selected:  # ascending id order keeps the merge deterministic
        client = clients[cid]
        trained[cid] = local_train(client, global_models[client.prototype_id], cfg, round_t)

    new_models: Dict[str, Model] = {}
    for proto_id, model in global_models.items():
        members = [cid for cid in selected if clients[cid].prototype_id == proto_id]
        if members:
            new_models[proto_id] = average_parameters(
                [(trained[cid], len(clients[cid].dataset)) for cid in members]
            )
        else:
            new_models[proto_id] = model  # nobody trained this prototype this round

    mean_loss = None
    if cfg.uses_distillation:
        logits = [forward(trained[cid], prep.distill_data.features) for cid in selected]
        if cfg.method == METHOD_FEDAUX:
            scores = [prep.score_maps[cid] for cid in selected]
            teacher = aggregate_weighted(logits, scores)
        else:
            teacher = aggregate_mean(logits)
        dcfg = replace(cfg.distill, seed=cfg.seed)
        losses = []
        for proto_id in sorted(new_models):
            new_models[proto_id], loss = distill(
                new_models[proto_id], prep.distill_data, teacher, dcfg,
                return_mean_loss=True, stream=(round_t,),
            )
            if loss is not None:
                losses.append(loss)
        mean_loss = float(np.mean(losses)) if losses else None
    return new_models, mean_loss


def evaluate_accuracy(global_models: Dict[str, Model], test: Dataset) -> float:
    """Top-1 accuracy; for mixed prototypes, the mean over prototype models."""
    accs = []
    for proto_id in sorted(global_models):
        logits = forward(global_models[proto_id], test.features)
        accs.append(float(np.mean(logits.argmax(axis=1) == test.labels)))
    return float(np.mean(accs))


@dataclass
class RunResult:
    records: List[RoundRecord]
    global_models: Dict[str, Model]
    clients: List[ClientState]
    preparation: PreparationResult


def run_training(
    cfg: FederationConfig,
    client_datasets: List[Dataset],
    aux: Optional[Dataset],
    test: Dataset,
    alpha: Optional[float] = None,
) -> RunResult:
    """Preparation plus T rounds; the server model is evaluated after each."""
    if len(client_datasets) != cfg.n_clients:
        raise ConfigError(
            f"{len(client_datasets)} client datasets for {cfg.n_clients} clients"
        )
    clients = [
        ClientState(id=i, dataset=ds, prototype_id=cfg.prototype_map[i])
        for i, ds in enumerate(client_datasets)
    ]
    prep = run_preparation(cfg, clients, aux)

    global_models: Dict[str, Model] = {}
    for proto_id in sorted({c.prototype_id for c in clients}):
        proto = cfg.prototype_by_id(proto_id)
        if proto_id in prep.extractors:
            global_models[proto_id] = Model(
                proto, prep.extractors[proto_id], np.zeros(proto.n_head_params)
            )
        else:
            global_models[proto_id] = init_model(proto, cfg.seed)

    def record(round_t, mean_loss, wall_ms):
        return RoundRecord(
            round=round_t,
            method=cfg.method + ("+P" if cfg.pretrained_init and cfg.method != METHOD_FEDAUX else ""),
            alpha=alpha,
            seed=cfg.seed,
            accuracy=evaluate_accuracy(global_models, test),
            mean_distill_loss=mean_loss,
            wall_ms=wall_ms,
        )

    records = [record(0, None, 0)]
    for round_t in range(1, cfg.rounds + 1):
        start = time.monotonic()
        global_models, mean_loss = run_round(round_t, global_models, clients, cfg, prep)
        records.append(record(round_t, mean_loss, int((time.monotonic() - start) * 1000)))
    return RunResult(records=records, global_models=global_models, clients=clients, preparation=prep)
