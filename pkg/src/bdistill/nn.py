"""Dense-network stack: MLP forward pass, exact reverse-mode gradients for the
two behaviour-cloning losses, and Adam with global-norm gradient clipping.

All array math is batch-generic: parameter arrays may carry one leading batch
axis (a stack of B networks trained in lockstep), in which case observations
are shaped (B, N, obs_dim). The public single-network API is the unstacked
special case of the same code paths.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError, ShapeError

ACTIVATIONS = ("tanh", "relu")

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PolicyParams:
    """Weights and biases of an MLP with architecture [obs_dim, width, width, out_dim].

    ``weights[l]`` has shape (fan_in, fan_out); ``biases[l]`` has shape
    (fan_out,). For continuous action spaces the final layer emits
    2*action_dim values: per-dimension means followed by log-stds.
    """

    weights: list
    biases: list
    activation: str = "tanh"

    @property
    def obs_dim(self):
        return self.weights[0].shape[-2]

    @property
    def out_dim(self):
        return self.weights[-1].shape[-1]

    @property
    def n_params(self):
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def astype(self, dtype):
        return PolicyParams(
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
            self.activation,
        )

    def copy(self):
        return PolicyParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


def init_policy(obs_dim, width, out_dim, activation="tanh", seed=0, dtype=np.float32):
    """Create a freshly initialized two-hidden-layer MLP.

    Uses variance-scaled uniform init (Glorot-style bounds, gain sqrt(2) for
    relu hidden layers, 0.5 on the output layer so initial outputs are small);
    biases start at zero.
    """
    if activation not in ACTIVATIONS:
        raise InputError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
    rng = np.random.default_rng(seed)
    dims = [obs_dim, width, width, out_dim]
    hidden_gain = np.sqrt(2.0) if activation == "relu" else 1.0
    weights, biases = [], []
    for i in range(3):
        fan_in, fan_out = dims[i], dims[i + 1]
        gain = hidden_gain if i < 2 else 0.5
        limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return PolicyParams(weights, biases, activation)


def _apply_act(z, activation):
    if activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad_from_output(a, activation):
    # tanh' = 1 - tanh^2; relu' recovers from the output sign (a==0 -> 0).
    if activation == "tanh":
        return 1.0 - a * a
    return (a > 0.0).astype(a.dtype)


def _linear(x, w, b):
    return np.matmul(x, w) + b[..., None, :]


def forward_arrays(weights, biases, obs, activation):
    """Forward pass over raw parameter arrays. obs: (..., N, obs_dim)."""
    h = obs
    for w, b in zip(weights[:-1], biases[:-1]):
        h = _apply_act(_linear(h, w, b), activation)
    return _linear(h, weights[-1], biases[-1])


def _forward_cached(weights, biases, obs, activation):
    inputs = [obs]
    h = obs
    for w, b in zip(weights[:-1], biases[:-1]):
        h = _apply_act(_linear(h, w, b), activation)
        inputs.append(h)
    out = _linear(h, weights[-1], biases[-1])
    return out, inputs


def _backward(weights, inputs, d_out, activation):
    """Backprop from d(loss)/d(logits) to per-layer gradients."""
    d_ws = [None] * len(weights)
    d_bs = [None] * len(weights)
    grad = d_out
    for layer in range(len(weights) - 1, -1, -1):
        h = inputs[layer]
        d_ws[layer] = np.matmul(np.swapaxes(h, -1, -2), grad)
        d_bs[layer] = grad.sum(axis=-2)
        if layer > 0:
            grad = np.matmul(grad, np.swapaxes(weights[layer], -1, -2))
            grad = grad * _act_grad_from_output(h, activation)
    return d_ws, d_bs


def forward(params: PolicyParams, obs_batch) -> np.ndarray:
    """Run the policy on a batch of observations.

    Returns logits for discrete heads, or concatenated [means, log-stds] for
    continuous heads. Row order is preserved.
    """
    obs_batch = np.asarray(obs_batch)
    if obs_batch.ndim != 2 or obs_batch.shape[1] != params.obs_dim:
        raise ShapeError(
            f"obs batch has shape {obs_batch.shape}, expected (n, {params.obs_dim})"
        )
    return forward_arrays(params.weights, params.biases, obs_batch, params.activation)


def _check_batch(obs_batch, params):
    obs_batch = np.asarray(obs_batch)
    if obs_batch.ndim != 2 or obs_batch.shape[-1] != params.obs_dim:
        raise ShapeError(
            f"obs batch has shape {obs_batch.shape}, expected (n, {params.obs_dim})"
        )
    if obs_batch.shape[0] == 0:
        raise InputError("empty observation batch")
    return obs_batch


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels.

    logits: (..., N, C); labels: (N,) or (..., N). Returns (loss (...,),
    d_logits) where d_logits already includes the 1/N batch-mean factor.
    """
    n = logits.shape[-2]
    labels = np.asarray(labels).astype(np.int64)
    rows = np.arange(n)
    zmax = logits.max(axis=-1, keepdims=True)
    shifted = logits - zmax
    exp = np.exp(shifted)
    denom = exp.sum(axis=-1, keepdims=True)
    picked = shifted[..., rows, labels] - np.log(denom[..., 0])
    loss = -picked.mean(axis=-1)
    d_logits = exp / denom
    d_logits[..., rows, labels] -= 1.0
    return loss, d_logits / n


def bc_grads_discrete(weights, biases, activation, obs, labels):
    """Stacked cross-entropy BC loss and exact gradients."""
    out, inputs = _forward_cached(weights, biases, obs, activation)
    loss, d_out = softmax_cross_entropy(out, labels)
    d_ws, d_bs = _backward(weights, inputs, d_out, activation)
    return loss, d_ws, d_bs


def bc_grads_continuous(weights, biases, activation, obs, targets):
    """Stacked Gaussian negative-log-likelihood BC loss and exact gradients.

    The network head emits [means | log-stds]; the loss is averaged over both
    the batch and the action dimensions.
    """
    out, inputs = _forward_cached(weights, biases, obs, activation)
    a_dim = out.shape[-1] // 2
    mu = out[..., :a_dim]
    log_std = out[..., a_dim:]
    diff = mu - targets
    with np.errstate(over="ignore", invalid="ignore"):
        inv_var = np.exp(-2.0 * log_std)
        per_elem = 0.5 * LOG_2PI + log_std + 0.5 * diff * diff * inv_var
        loss = per_elem.mean(axis=(-1, -2))
        scale = 1.0 / (out.shape[-2] * a_dim)
        d_mu = diff * inv_var * scale
        d_log_std = (1.0 - diff * diff * inv_var) * scale
    d_out = np.concatenate([d_mu, d_log_std], axis=-1)
    d_ws, d_bs = _backward(weights, inputs, d_out, activation)
    return loss, d_ws, d_bs


def bc_loss_discrete(params: PolicyParams, obs_batch, labels):
    """Cross-entropy behaviour-cloning loss with exact gradients.

    Returns (loss, grads) where grads is a PolicyParams carrying the
    per-parameter derivatives.
    """
    obs_batch = _check_batch(obs_batch, params)
    labels = np.asarray(labels)
    n_actions = params.out_dim
    if labels.shape != (obs_batch.shape[0],):
        raise ShapeError(f"labels have shape {labels.shape}, expected ({obs_batch.shape[0]},)")
    if labels.min() < 0 or labels.max() >= n_actions:
        raise InputError(f"labels must lie in [0, {n_actions})")
    loss, d_ws, d_bs = bc_grads_discrete(
        params.weights, params.biases, params.activation, obs_batch, labels
    )
    return float(loss), PolicyParams(d_ws, d_bs, params.activation)


def bc_loss_continuous(params: PolicyParams, obs_batch, action_targets):
    """Gaussian NLL behaviour-cloning loss with exact gradients."""
    obs_batch = _check_batch(obs_batch, params)
    targets = np.asarray(action_targets)
    a_dim = params.out_dim // 2
    if targets.shape != (obs_batch.shape[0], a_dim):
        raise ShapeError(
            f"action targets have shape {targets.shape}, expected ({obs_batch.shape[0]}, {a_dim})"
        )
    if not np.isfinite(targets).all():
        raise InputError("action targets must be finite")
    loss, d_ws, d_bs = bc_grads_continuous(
        params.weights, params.biases, params.activation, obs_batch, targets
    )
    return float(loss), PolicyParams(d_ws, d_bs, params.activation)


# --- flat parameter vectors ------------------------------------------------

def flatten_params(params: PolicyParams) -> np.ndarray:
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def params_from_flat(flat, template: PolicyParams) -> PolicyParams:
    flat = np.asarray(flat)
    if flat.shape != (template.n_params,):
        raise ShapeError(f"flat vector has shape {flat.shape}, expected ({template.n_params},)")
    ws, bs = flat_views(flat, template)
    return PolicyParams([w.copy() for w in ws], [b.copy() for b in bs], template.activation)


def flat_views(flat, template: PolicyParams):
    """Per-layer reshaped views into a flat vector (..., n_params).

    The flat layout is W1, b1, W2, b2, ... in row-major order. Views share
    memory with ``flat`` whenever numpy can express the reshape without a
    copy (always true for a C-contiguous last axis).
    """
    lead = flat.shape[:-1]
    ws, bs = [], []
    offset = 0
    for w, b in zip(template.weights, template.biases):
        size = w.shape[-2] * w.shape[-1]
        ws.append(flat[..., offset : offset + size].reshape(lead + w.shape[-2:]))
        offset += size
        bs.append(flat[..., offset : offset + b.shape[-1]].reshape(lead + (b.shape[-1],)))
        offset += b.shape[-1]
    return ws, bs


# --- Adam with global-norm clipping ----------------------------------------

@dataclass
class AdamState:
    """Adam optimizer moments for a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(n_params, lr, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float32):
    zeros = np.zeros(n_params, dtype=dtype)
    return AdamState(zeros, zeros.copy(), 0, lr, beta1, beta2, eps)


def clip_global_norm(grads, max_norm):
    """Scale rows of (..., D) so each row's l2 norm is at most max_norm."""
    norm = np.sqrt((grads * grads).sum(axis=-1, keepdims=True))
    scale = np.where(norm > max_norm, max_norm / np.maximum(norm, 1e-30), 1.0)
    return grads * scale.astype(grads.dtype)


def adam_delta(m, v, step, grads, lr, beta1, beta2, eps):
    """One bias-corrected Adam update on (..., D) arrays.

    Returns (new_m, new_v, delta); the caller applies ``params -= delta``.
    """
    t = step + 1
    m = beta1 * m + (1.0 - beta1) * grads
    v = beta2 * v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    delta = lr * m_hat / (np.sqrt(v_hat) + eps)
    return m, v, delta


def adam_step(state: AdamState, params: PolicyParams, grads: PolicyParams, max_grad_norm=None):
    """Clip gradients by global norm, then apply one Adam step.

    Pure: returns (new AdamState, new PolicyParams).
    """
    flat = flatten_params(params)
    g = flatten_params(grads)
    if g.shape != state.m.shape:
        raise ShapeError(f"gradient size {g.shape} does not match moments {state.m.shape}")
    if max_grad_norm is not None:
        g = clip_global_norm(g, max_grad_norm)
    m, v, delta = adam_delta(state.m, state.v, state.step, g, state.lr, state.beta1, state.beta2, state.eps)
    new_state = replace(state, m=m, v=v, step=state.step + 1)
    return new_state, params_from_flat(flat - delta, params)


# --- stacked policy helpers (engine hot path) -------------------------------

def stack_flat(params: PolicyParams, batch):
    """Tile one policy into a (batch, n_params) flat stack."""
    return np.repeat(flatten_params(params)[None, :], batch, axis=0)


def policy_at(flat_stack, index, template: PolicyParams) -> PolicyParams:
    return params_from_flat(flat_stack[index], template)


def grads_to_flat(d_ws, d_bs):
    """Pack per-layer gradient arrays into a flat (..., D) array."""
    parts = []
    for w, b in zip(d_ws, d_bs):
        parts.append(w.reshape(w.shape[: w.ndim - 2] + (-1,)))
        parts.append(b)
    return np.concatenate(parts, axis=-1)


# --- policy files (.bdp) -----------------------------------------------------

_POLICY_MAGIC = b"BDPW"
_POLICY_VERSION = 1


def save_policy(params: PolicyParams, path):
    """Small self-describing container, canonical bytes for determinism."""
    import json
    import struct

    from .errors import FormatError  # noqa: F401  (symmetry with load)

    header = json.dumps(
        {
            "activation": params.activation,
            "layer_dims": [list(w.shape) for w in params.weights],
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_POLICY_MAGIC)
        fh.write(struct.pack("<HI", _POLICY_VERSION, len(header)))
        fh.write(header)
        fh.write(flatten_params(params).astype("<f4").tobytes())


def load_policy(path) -> PolicyParams:
    import json
    import struct

    from .errors import FormatError

    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _POLICY_MAGIC:
        raise FormatError(f"{path}: not a policy container (bad magic)")
    version, header_len = struct.unpack_from("<HI", blob, 4)
    if version != _POLICY_VERSION:
        raise FormatError(f"{path}: unsupported policy version {version}")
    header = json.loads(blob[10 : 10 + header_len])
    dims = header["layer_dims"]
    template = PolicyParams(
        [np.zeros(tuple(d), dtype=np.float32) for d in dims],
        [np.zeros(d[1], dtype=np.float32) for d in dims],
        header["activation"],
    )
    flat = np.frombuffer(blob, dtype="<f4", offset=10 + header_len)
    if flat.size != template.n_params:
        raise FormatError(f"{path}: truncated policy payload")
    return params_from_flat(flat.astype(np.float32), template)
