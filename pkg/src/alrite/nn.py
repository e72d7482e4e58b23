"""Minimal dense neural-network engine on numpy.

Provides the Mlp container, exact reverse-mode backpropagation, Adam with
exponential learning-rate decay, parameter norms and a spectral-norm based
Lipschitz upper bound. No GPU, no stochastic layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("elu", "identity")


@dataclass
class Mlp:
    """Feed-forward network: affine layers with ELU (or identity) hidden
    activations and an affine output layer, optionally rescaled to unit L2
    norm per example."""

    layer_dims: list[int]
    weights: list[np.ndarray]  # weights[l] has shape (layer_dims[l], layer_dims[l+1])
    biases: list[np.ndarray]
    activation: str = "elu"
    output_normalization: bool = False

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        dims = self.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("weights/biases do not chain with layer_dims")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[l], dims[l + 1]) or b.shape != (dims[l + 1],):
                raise ValueError(f"layer {l}: shape mismatch with layer_dims")

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def copy(self) -> "Mlp":
        return Mlp(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.output_normalization,
        )


def mlp_init(
    layer_dims: list[int],
    rng: np.random.Generator,
    activation: str = "elu",
    output_normalization: bool = False,
) -> Mlp:
    """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    weights, biases = [], []
    for fi, fo in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / (fi + fo))
        weights.append(rng.uniform(-bound, bound, size=(fi, fo)))
        biases.append(np.zeros(fo))
    return Mlp(list(layer_dims), weights, biases, activation, output_normalization)


def elu(u: np.ndarray) -> np.ndarray:
    return np.where(u >= 0, u, np.expm1(u))


def elu_grad(u: np.ndarray) -> np.ndarray:
    return np.where(u >= 0, 1.0, np.exp(u))


def _as_batch(x: np.ndarray, in_dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != in_dim:
        raise ValueError(f"input shape {x.shape} incompatible with input dim {in_dim}")
    return x, single


def forward_cached(mlp: Mlp, x: np.ndarray):
    """Forward pass keeping the per-layer activations needed by backward.

    Returns (output, cache). cache holds the input of each affine layer and
    the pre-activations of hidden layers, plus normalization state.
    """
    x, _ = _as_batch(x, mlp.in_dim)
    inputs = [x]
    pre_acts = []
    a = x
    n_layers = len(mlp.weights)
    for l in range(n_layers):
        z = a @ mlp.weights[l] + mlp.biases[l]
        if l < n_layers - 1:
            pre_acts.append(z)
            a = elu(z) if mlp.activation == "elu" else z
            inputs.append(a)
        else:
            a = z
    raw_out = a
    norms = None
    if mlp.output_normalization:
        norms = np.linalg.norm(raw_out, axis=1, keepdims=True)
        safe = np.where(norms > 0, norms, 1.0)
        out = raw_out / safe
    else:
        out = raw_out
    return out, (inputs, pre_acts, raw_out, norms)


def forward(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the network; accepts a single vector or an (n, d) batch."""
    xb, single = _as_batch(x, mlp.in_dim)
    out, _ = forward_cached(mlp, xb)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite network output")
    return out[0] if single else out


def backward(mlp: Mlp, cache, upstream: np.ndarray):
    """Exact reverse-mode gradients given upstream = dL/d(output).

    Returns (grad_weights, grad_biases, grad_input); all sums over the batch.
    """
    upstream = np.asarray(upstream, dtype=float)
    if not np.all(np.isfinite(upstream)):
        raise FloatingPointError("non-finite upstream gradient")
    inputs, pre_acts, raw_out, norms = cache
    if upstream.ndim == 1:
        upstream = upstream[None, :]
    g = upstream
    if mlp.output_normalization:
        safe = np.where(norms > 0, norms, 1.0)
        u = raw_out / safe
        # d(v/|v|)/dv applied to g: (g - (g.u) u) / |v|; identity at v = 0.
        dot = np.sum(g * u, axis=1, keepdims=True)
        g = np.where(norms > 0, (g - dot * u) / safe, g)
    n_layers = len(mlp.weights)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        grad_w[l] = inputs[l].T @ g
        grad_b[l] = g.sum(axis=0)
        g = g @ mlp.weights[l].T
        if l > 0:
            if mlp.activation == "elu":
                g = g * elu_grad(pre_acts[l - 1])
    return grad_w, grad_b, g


@dataclass
class AdamState:
    """Adam accumulators with exponential learning-rate decay
    (effective lr = base_lr * decay_rate ** (step / decay_period))."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int
    base_lr: float
    decay_rate: float = 0.97
    decay_period: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], base_lr: float,
                   decay_rate: float = 0.97, decay_period: int = 100) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            step=0,
            base_lr=base_lr,
            decay_rate=decay_rate,
            decay_period=decay_period,
        )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """One Adam update, in place on params and state."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("params/grads/state length mismatch")
    lr = state.base_lr * state.decay_rate ** (state.step / state.decay_period)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError("gradient shape mismatch")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    state.step = t


def param_norm_sq(*mlps: Mlp) -> float:
    """Sum of squared weights and biases over all given networks."""
    total = 0.0
    for mlp in mlps:
        for p in mlp.params():
            total += float(np.sum(p * p))
    return total


def spectral_norm(w: np.ndarray, iters: int = 50, tol: float = 1e-7) -> float:
    """Largest singular value via power iteration on w^T w."""
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        return 0.0
    v = np.ones(w.shape[1]) / np.sqrt(w.shape[1])
    sigma = 0.0
    for _ in range(iters):
        u = w @ v
        nu = np.linalg.norm(u)
        if nu == 0:
            return 0.0
        u /= nu
        v = w.T @ u
        new_sigma = np.linalg.norm(v)
        if new_sigma == 0:
            return 0.0
        v /= new_sigma
        if abs(new_sigma - sigma) < tol:
            sigma = new_sigma
            break
        sigma = new_sigma
    return float(sigma)


def lipschitz_upper_bound(mlp: Mlp) -> float:
    """Product of per-layer spectral norms; valid since ELU and identity are
    1-Lipschitz. Exact operator norm for a single affine layer."""
    if mlp.output_normalization:
        raise ValueError("no finite Lipschitz bound with unit-norm output rescaling")
    bound = 1.0
    for w in mlp.weights:
        bound *= spectral_norm(w)
    return bound


def mlp_to_dict(mlp: Mlp) -> dict:
    return {
        "layer_dims": list(mlp.layer_dims),
        "activation": mlp.activation,
        "output_normalization": mlp.output_normalization,
        "weights": [w.tolist() for w in mlp.weights],
        "biases": [b.tolist() for b in mlp.biases],
    }


def mlp_from_dict(d: dict) -> Mlp:
    return Mlp(
        layer_dims=list(d["layer_dims"]),
        weights=[np.asarray(w, dtype=float) for w in d["weights"]],
        biases=[np.asarray(b, dtype=float) for b in d["biases"]],
        activation=d["activation"],
        output_normalization=bool(d["output_normalization"]),
    )
