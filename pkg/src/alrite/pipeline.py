"""Embedding + two-head pipelines, their compound training loss and the
epoch-based trainer with validation retention.

A control-driven pipeline fits its control head on control samples, its
treated head on twin-vote-weighted treated samples, and pulls control samples
toward their latent mirror twins; the treatment-driven role is the exact
mirror image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Scaler, SplitIndices, identity_scaler, standardize
from .nn import (AdamState, Mlp, adam_step, backward, forward, forward_cached,
                 mlp_from_dict, mlp_init, mlp_to_dict, param_norm_sq)
from .twin import ArmError, TwinMap, mirror_twins

ROLES = ("control_driven", "treatment_driven")


class TrainingError(RuntimeError):
    pass


@dataclass
class Pipeline:
    phi: Mlp
    h0: Mlp
    h1: Mlp
    role: str
    scaler: Scaler | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        k = self.phi.out_dim
        if self.h0.in_dim != k or self.h1.in_dim != k:
            raise ValueError("head input dim must equal embedding output dim")

    @property
    def focus_arm(self) -> int:
        return 0 if self.role == "control_driven" else 1

    def networks(self) -> tuple[Mlp, Mlp, Mlp]:
        return self.phi, self.h0, self.h1

    def copy(self) -> "Pipeline":
        return Pipeline(self.phi.copy(), self.h0.copy(), self.h1.copy(), self.role, self.scaler)

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "phi": mlp_to_dict(self.phi),
            "h0": mlp_to_dict(self.h0),
            "h1": mlp_to_dict(self.h1),
            "scaler": self.scaler.to_dict() if self.scaler else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pipeline":
        scaler = Scaler.from_dict(d["scaler"]) if d.get("scaler") else None
        return cls(mlp_from_dict(d["phi"]), mlp_from_dict(d["h0"]),
                   mlp_from_dict(d["h1"]), d["role"], scaler)


@dataclass
class PipelineHyperparams:
    alpha: float = 0.0  # counterfactualizability strength
    beta: float = 0.0  # twin-vote reweighting importance
    gamma: float = 1e-4  # L2 strength
    embed_layers: int = 2
    head_layers: int = 2
    embed_width: int = 20
    head_width: int = 20
    batch_size: int = 100
    epochs: int = 100
    base_lr: float = 1e-2
    normalize_embedding: bool = True
    normalize_heads: bool = False
    decay_rate: float = 0.97
    decay_period: int = 100

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("alpha, beta, gamma must be >= 0")
        if min(self.embed_layers, self.head_layers) < 1:
            raise ValueError("need at least one layer per network")
        if min(self.embed_width, self.head_width, self.batch_size) < 1 or self.base_lr <= 0:
            raise ValueError("widths, batch size and learning rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainReport:
    """Per-epoch loss terms and validation factual MSE; index 0 is the
    initialization, index e the state after epoch e."""

    loss_breakdowns: list[dict]
    val_mse: list[float]
    retained_epoch: int


def build_pipeline(d: int, role: str, hp: PipelineHyperparams,
                   rng: np.random.Generator) -> Pipeline:
    phi_dims = [d] + [hp.embed_width] * hp.embed_layers
    head_dims = [hp.embed_width] + [hp.head_width] * (hp.head_layers - 1) + [1]
    phi = mlp_init(phi_dims, rng, "elu", hp.normalize_embedding)
    h0 = mlp_init(head_dims, rng, "elu", hp.normalize_heads)
    h1 = mlp_init(head_dims, rng, "elu", hp.normalize_heads)
    return Pipeline(phi, h0, h1, role)


def _orientation(p: Pipeline):
    """(focus arm, own head, cross head). The own head models the focus arm's
    outcome; the cross head models the opposite arm with twin-vote weights."""
    if p.focus_arm == 0:
        return 0, p.h0, p.h1
    return 1, p.h1, p.h0


def _loss_core(p: Pipeline, x, t, y, twinmap: TwinMap, hp: PipelineHyperparams,
               n_focus: int, n_other: int, batch: np.ndarray, want_grads: bool):
    focus, own_head, cross_head = _orientation(p)
    bf = batch[t[batch] == focus]
    bo = batch[t[batch] == 1 - focus]
    if n_focus == 0 or n_other == 0:
        raise ArmError("both treatment arms must be non-empty")
    twins = twinmap.twin_index[bf]
    union = np.unique(np.concatenate([bf, bo, twins]))
    z_union, cache_phi = forward_cached(p.phi, x[union])
    row = {s: r for r, s in enumerate(union)}
    rf = np.asarray([row[s] for s in bf], dtype=int)
    ro = np.asarray([row[s] for s in bo], dtype=int)
    rm = np.asarray([row[s] for s in twins], dtype=int)

    terms = {}
    pred_f, cache_own = forward_cached(own_head, z_union[rf]) if len(rf) else (np.zeros((0, 1)), None)
    res_f = pred_f[:, 0] - y[bf]
    terms["own_factual"] = float(np.sum(res_f**2)) / n_focus

    pred_o, cache_cross = forward_cached(cross_head, z_union[ro]) if len(ro) else (np.zeros((0, 1)), None)
    res_o = pred_o[:, 0] - y[bo]
    w_o = 1.0 + hp.beta * twinmap.weight[bo]
    denom = n_other + hp.beta * n_focus
    terms["cross_factual"] = float(np.sum(w_o * res_o**2)) / denom

    diff = z_union[rf] - z_union[rm]
    terms["counterfactualizability"] = hp.alpha / n_focus * float(np.sum(diff**2))

    terms["regularization"] = hp.gamma * param_norm_sq(*p.networks())
    total = sum(terms.values())
    if not want_grads:
        return total, terms, None

    gz = np.zeros_like(z_union)
    grads = {}
    if len(rf):
        up = (2.0 / n_focus) * res_f[:, None]
        gw, gb, gin = backward(own_head, cache_own, up)
        grads["own"] = (gw, gb)
        np.add.at(gz, rf, gin)
    else:
        grads["own"] = ([np.zeros_like(w) for w in own_head.weights],
                        [np.zeros_like(b) for b in own_head.biases])
    if len(ro):
        up = (2.0 / denom) * (w_o * res_o)[:, None]
        gw, gb, gin = backward(cross_head, cache_cross, up)
        grads["cross"] = (gw, gb)
        np.add.at(gz, ro, gin)
    else:
        grads["cross"] = ([np.zeros_like(w) for w in cross_head.weights],
                          [np.zeros_like(b) for b in cross_head.biases])
    # alpha term: gradient flows through both endpoints, never through the
    # twin index itself
    coef = 2.0 * hp.alpha / n_focus
    np.add.at(gz, rf, coef * diff)
    np.add.at(gz, rm, -coef * diff)
    gw, gb, _ = backward(p.phi, cache_phi, gz)
    grads["phi"] = (gw, gb)
    return total, terms, grads


def _batch_indices(x, t, y, indices):
    if indices is None:
        return np.arange(len(t))
    return np.asarray(indices, dtype=int)


def compound_loss(p: Pipeline, x: np.ndarray, t: np.ndarray, y: np.ndarray,
                  twinmap: TwinMap, hp: PipelineHyperparams,
                  batch: np.ndarray | None = None,
                  n_focus: int | None = None, n_other: int | None = None):
    """Value and per-term breakdown of the compound loss over `batch`
    (defaults to all samples). Normalizers use full-set arm counts so
    batch losses sum to the full loss over an epoch (up to the shared
    regularizer)."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=int)
    y = np.asarray(y, dtype=float)
    focus = p.focus_arm
    nf = int(np.sum(t == focus)) if n_focus is None else n_focus
    no = int(np.sum(t == 1 - focus)) if n_other is None else n_other
    total, terms, _ = _loss_core(p, x, t, y, twinmap, hp, nf, no,
                                 _batch_indices(x, t, y, batch), want_grads=False)
    return total, terms


def compound_loss_grads(p: Pipeline, x, t, y, twinmap: TwinMap,
                        hp: PipelineHyperparams, batch=None):
    """Loss, breakdown and parameter gradients (phi, h0, h1 order)."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=int)
    y = np.asarray(y, dtype=float)
    focus = p.focus_arm
    nf = int(np.sum(t == focus))
    no = len(t) - nf
    total, terms, grads = _loss_core(p, x, t, y, twinmap, hp, nf, no,
                                     _batch_indices(x, t, y, batch), want_grads=True)
    gw_phi, gb_phi = grads["phi"]
    own_g, cross_g = grads["own"], grads["cross"]
    if p.focus_arm == 0:
        h0_g, h1_g = own_g, cross_g
    else:
        h0_g, h1_g = cross_g, own_g
    flat = list(gw_phi) + list(gb_phi) + list(h0_g[0]) + list(h0_g[1]) \
        + list(h1_g[0]) + list(h1_g[1])
    params = _flat_params(p)
    for g, prm in zip(flat, params):
        g += 2.0 * hp.gamma * prm
    return total, terms, flat


def _flat_params(p: Pipeline) -> list[np.ndarray]:
    return (list(p.phi.weights) + list(p.phi.biases)
            + list(p.h0.weights) + list(p.h0.biases)
            + list(p.h1.weights) + list(p.h1.biases))


def _latent(p: Pipeline, x_std: np.ndarray) -> np.ndarray:
    return forward(p.phi, np.atleast_2d(x_std))


def predict_mu(p: Pipeline, x: np.ndarray, arm) -> np.ndarray:
    """Factual prediction for the given arm(s), in original outcome units."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    scaler = p.scaler or identity_scaler(x.shape[1])
    z = _latent(p, scaler.transform_x(x))
    arm = np.broadcast_to(np.asarray(arm, dtype=int), (x.shape[0],))
    out = np.empty(x.shape[0])
    for a, head in ((0, p.h0), (1, p.h1)):
        mask = arm == a
        if mask.any():
            out[mask] = forward(head, z[mask])[:, 0]
    return scaler.inverse_y(out)


def predict_tau(p: Pipeline, x: np.ndarray):
    """h1(phi(x)) - h0(phi(x)), de-standardized to outcome units."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    scaler = p.scaler or identity_scaler(xb.shape[1])
    z = _latent(p, scaler.transform_x(xb))
    tau = (forward(p.h1, z)[:, 0] - forward(p.h0, z)[:, 0]) * scaler.y_scale
    return float(tau[0]) if single else tau


def factual_mse(p: Pipeline, dataset: Dataset, indices) -> float:
    """Mean squared factual error over the given indices, original units."""
    idx = np.asarray(indices, dtype=int)
    if idx.size == 0:
        raise ValueError("empty index set")
    pred = predict_mu(p, dataset.x[idx], dataset.t[idx])
    return float(np.mean((dataset.y[idx] - pred) ** 2))


def _val_factual_mse_std(p: Pipeline, x_std, t, y_std, idx) -> float:
    z = _latent(p, x_std[idx])
    pred = np.where(t[idx] == 1, forward(p.h1, z)[:, 0], forward(p.h0, z)[:, 0])
    return float(np.mean((y_std[idx] - pred) ** 2))


def train_pipeline(dataset: Dataset, split_idx: SplitIndices, role: str,
                   hp: PipelineHyperparams, seed: int) -> tuple[Pipeline, TrainReport]:
    """Epoch loop: refresh twins under the current embedding, sweep shuffled
    minibatches with Adam, then score validation factual MSE; the parameters
    of the best-scoring epoch are retained."""
    train_idx = np.asarray(split_idx.train, dtype=int)
    val_idx = np.asarray(split_idx.validation, dtype=int)
    for part, name in ((train_idx, "train"), (val_idx, "validation")):
        ts = dataset.t[part]
        if ts.sum() in (0, len(ts)):
            raise ArmError(f"{name} split has an empty treatment arm")
    scaler, ds_std = standardize(dataset, train_idx)
    x = ds_std.x[train_idx]
    t = ds_std.t[train_idx]
    y = ds_std.y[train_idx]
    n = len(train_idx)
    focus = 0 if role == "control_driven" else 1
    n_focus = int(np.sum(t == focus))
    n_other = n - n_focus

    rng = np.random.default_rng(seed)
    p = build_pipeline(dataset.d, role, hp, rng)
    p.scaler = scaler
    params = _flat_params(p)
    state = AdamState.for_params(params, hp.base_lr, hp.decay_rate, hp.decay_period)

    breakdowns: list[dict] = []
    val_mses = [_val_factual_mse_std(p, ds_std.x, ds_std.t, ds_std.y, val_idx)]
    best_epoch = 0
    best_mse = val_mses[0]
    best_params = [prm.copy() for prm in params]

    for epoch in range(hp.epochs):
        z = forward(p.phi, x)
        twinmap = mirror_twins(z, t)
        # beta-normalizer sanity: the cross arm holds exactly n_focus votes
        assert twinmap.weight[t == 1 - focus].sum() == n_focus
        order = rng.permutation(n)
        epoch_terms = {"own_factual": 0.0, "cross_factual": 0.0,
                       "counterfactualizability": 0.0, "regularization": 0.0}
        n_batches = 0
        for start in range(0, n, hp.batch_size):
            batch = order[start : start + hp.batch_size]
            loss, terms, grads = compound_loss_grads(p, x, t, y, twinmap, hp, batch)
            if not np.isfinite(loss):
                bad = [k for k, v in terms.items() if not np.isfinite(v)]
                raise TrainingError(f"non-finite loss at epoch {epoch}; offending terms: {bad}")
            adam_step(params, grads, state)
            for k, v in terms.items():
                epoch_terms[k] += v
            n_batches += 1
        epoch_terms["regularization"] /= max(n_batches, 1)  # shared term, not additive
        breakdowns.append(epoch_terms)
        val_mse = _val_factual_mse_std(p, ds_std.x, ds_std.t, ds_std.y, val_idx)
        val_mses.append(val_mse)
        if val_mse < best_mse:
            best_mse = val_mse
            best_epoch = epoch + 1
            best_params = [prm.copy() for prm in params]

    for prm, best in zip(params, best_params):
        prm[...] = best
    return p, TrainReport(breakdowns, val_mses, best_epoch)
