"""Dense numeric core: softmax/KL, MLP forward/backward, SGD and Adam.

All arrays are float64 numpy arrays.  Model parameters travel as a single
flat vector; gradients are derived by hand per layer and are validated
against central finite differences in the test suite.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, DivergenceError, NumericError, ParameterError

# exp() underflow guard: keeps softmax entries strictly positive.
_EXP_FLOOR = -700.0

LOSS_CROSS_ENTROPY = "cross_entropy"
LOSS_KL = "kl"
LOSS_PROXIMAL = "proximal"


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax of a 1-D logit vector (max-subtraction)."""
    z = np.asarray(logits, dtype=float)
    if z.ndim != 1 or z.size == 0:
        raise DimensionError(f"softmax expects a non-empty vector, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input contains non-finite entries")
    return row_softmax(z[None, :])[0]


def row_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of a 2-D logit matrix."""
    z = np.asarray(logits, dtype=float)
    if z.ndim != 2 or z.shape[1] == 0:
        raise DimensionError(f"row_softmax expects a 2-D matrix, got shape {z.shape}")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(np.maximum(shifted, _EXP_FLOOR))
    return e / e.sum(axis=1, keepdims=True)


def log_row_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    shifted = np.maximum(shifted, _EXP_FLOOR)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) = sum p_i ln(p_i / q_i), with 0 ln 0 := 0.

    q is clamped at 1e-12 before the log so that near-zero teacher mass does
    not blow up; an exact zero in q under positive p is rejected.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise DimensionError(f"kl_divergence shape mismatch: {p.shape} vs {q.shape}")
    if np.any((q <= 0.0) & (p > 0.0)):
        raise DivergenceError("q has zero mass where p is positive")
    qc = np.maximum(q, 1e-12)
    terms = np.where(p > 0.0, p * (np.log(np.maximum(p, 1e-300)) - np.log(qc)), 0.0)
    return float(terms.sum())


# ---------------------------------------------------------------------------
# MLP over a flat parameter vector
# ---------------------------------------------------------------------------

ACT_RELU = "relu"
ACT_IDENTITY = "identity"


@dataclass(frozen=True)
class MlpArchitecture:
    """Affine-layer stack: dims[i] -> dims[i+1] with activations[i] after layer i."""

    dims: tuple
    activations: tuple

    def __post_init__(self):
        if len(self.dims) < 2:
            raise ParameterError("architecture needs at least one layer")
        if len(self.activations) != len(self.dims) - 1:
            raise ParameterError("one activation per layer required")
        for a in self.activations:
            if a not in (ACT_RELU, ACT_IDENTITY):
                raise ParameterError(f"unknown activation {a!r}")

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def n_params(self) -> int:
        return sum((i + 1) * o for i, o in zip(self.dims[:-1], self.dims[1:]))


def init_params(arch: MlpArchitecture, rng: np.random.Generator) -> np.ndarray:
    """He-style random init: W ~ N(0, sqrt(2 / fan_in)), b = 0."""
    chunks = []
    for fan_in, fan_out in zip(arch.dims[:-1], arch.dims[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        chunks.append(w.ravel())
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def unflatten(arch: MlpArchitecture, params: np.ndarray):
    """Split a flat parameter vector into [(W, b), ...] views."""
    params = np.asarray(params, dtype=float)
    if params.shape != (arch.n_params,):
        raise DimensionError(
            f"parameter vector has size {params.size}, architecture needs {arch.n_params}"
        )
    layers = []
    i = 0
    for fan_in, fan_out in zip(arch.dims[:-1], arch.dims[1:]):
        w = params[i : i + fan_out * fan_in].reshape(fan_out, fan_in)
        i += fan_out * fan_in
        b = params[i : i + fan_out]
        i += fan_out
        layers.append((w, b))
    return layers


def forward_with_cache(arch: MlpArchitecture, params: np.ndarray, batch: np.ndarray):
    """Run the stack on a (rows x input_dim) batch; cache activations for backward."""
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != arch.dims[0]:
        raise DimensionError(f"batch has shape {x.shape}, expected (*, {arch.dims[0]})")
    pre, post = [], [x]
    a = x
    for (w, b), act in zip(unflatten(arch, params), arch.activations):
        z = a @ w.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if act == ACT_RELU else z
        post.append(a)
    return a, (pre, post)


def forward(arch: MlpArchitecture, params: np.ndarray, batch: np.ndarray) -> np.ndarray:
    return forward_with_cache(arch, params, batch)[0]


def backward_from_output_grad(arch, params, cache, d_out: np.ndarray) -> np.ndarray:
    """Backpropagate d(loss)/d(output) to a flat d(loss)/d(params) vector."""
    pre, post = cache
    layers = unflatten(arch, params)
    grads = [None] * arch.n_layers
    d = np.asarray(d_out, dtype=float)
    for l in range(arch.n_layers - 1, -1, -1):
        if arch.activations[l] == ACT_RELU:
            d = d * (pre[l] > 0.0)
        w, _ = layers[l]
        grads[l] = (d.T @ post[l], d.sum(axis=0))
        if l > 0:
            d = d @ w
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def mlp_forward_backward(
    arch: MlpArchitecture,
    params: np.ndarray,
    batch: np.ndarray,
    target_distribution: np.ndarray,
    loss_kind: str = LOSS_CROSS_ENTROPY,
    prox_mu: float = 0.0,
    prox_ref: np.ndarray = None,
):
    """Loss and flat parameter gradient for a softmax-output MLP.

    Loss kinds: cross-entropy, KL(target || softmax(logits)), or cross-entropy
    augmented with a proximal pull (mu/2)||params - prox_ref||^2.  Losses are
    averaged over batch rows.
    """
    target = np.asarray(target_distribution, dtype=float)
    batch = np.asarray(batch, dtype=float)
    if target.ndim != 2 or target.shape[0] != batch.shape[0]:
        raise DimensionError(
            f"target rows {target.shape} do not match batch rows {batch.shape}"
        )
    if target.shape[1] != arch.dims[-1]:
        raise DimensionError(
            f"target has {target.shape[1]} classes, architecture outputs {arch.dims[-1]}"
        )
    logits, cache = forward_with_cache(arch, params, batch)
    n_rows = batch.shape[0]
    logp = log_row_softmax(logits)
    ce = -float((target * logp).sum()) / n_rows

    if loss_kind == LOSS_KL:
        # KL = CE - H(target); entropy term is constant w.r.t. params.
        ent = -float(np.where(target > 0, target * np.log(np.maximum(target, 1e-300)), 0.0).sum())
        loss = ce - ent / n_rows
    elif loss_kind == LOSS_CROSS_ENTROPY:
        loss = ce
    elif loss_kind == LOSS_PROXIMAL:
        if prox_ref is None:
            raise ParameterError("proximal loss requires prox_ref")
        diff = params - np.asarray(prox_ref, dtype=float)
        loss = ce + 0.5 * prox_mu * float(diff @ diff)
    else:
        raise ParameterError(f"unknown loss kind {loss_kind!r}")

    d_logits = (row_softmax(logits) - target) / n_rows
    grad = backward_from_output_grad(arch, params, cache, d_logits)
    if loss_kind == LOSS_PROXIMAL:
        grad = grad + prox_mu * (params - np.asarray(prox_ref, dtype=float))
    return loss, grad


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerState:
    kind: str  # "sgd" or "adam"
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    first_moment: np.ndarray = None
    second_moment: np.ndarray = None
    step_count: int = 0


def make_optimizer(kind: str, learning_rate: float, dim: int) -> OptimizerState:
    if learning_rate < 0:
        raise ParameterError("learning_rate must be non-negative")
    if kind not in ("sgd", "adam"):
        raise ParameterError(f"unknown optimizer {kind!r}")
    return OptimizerState(
        kind=kind,
        learning_rate=learning_rate,
        first_moment=np.zeros(dim),
        second_moment=np.zeros(dim),
    )


def optimizer_step(state: OptimizerState, params: np.ndarray, gradient: np.ndarray):
    """One update; returns (new_params, new_state) without mutating inputs."""
    params = np.asarray(params, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    if params.shape != gradient.shape:
        raise DimensionError(f"params {params.shape} vs gradient {gradient.shape}")
    if state.kind == "sgd":
        return params - state.learning_rate * gradient, replace(
            state, step_count=state.step_count + 1
        )
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * gradient
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * gradient**2
    t = state.step_count + 1
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, first_moment=m, second_moment=v, step_count=t)
