"""Compound loss: term-by-term scalar oracle, finite-difference gradients,
role mirror symmetry, batch additivity and the training loop."""

import numpy as np
import pytest

from alrite.data import Dataset, SplitIndices, generate_ihdp_like, split
from alrite.nn import forward, param_norm_sq
from alrite.pipeline import (Pipeline, PipelineHyperparams, build_pipeline,
                             compound_loss, compound_loss_grads, factual_mse,
                             predict_mu, predict_tau, train_pipeline,
                             _flat_params)
from alrite.twin import mirror_twins


def tiny_instance(seed, n=14, d=3, normalize=False):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    t = rng.integers(0, 2, size=n)
    t[0], t[1] = 0, 1
    y = rng.standard_normal(n)
    hp = PipelineHyperparams(alpha=0.7, beta=0.4, gamma=0.01, embed_layers=1,
                             head_layers=1, embed_width=4, head_width=4,
                             batch_size=n, epochs=3, normalize_embedding=normalize)
    p = build_pipeline(d, "control_driven", hp, rng)
    for net in p.networks():
        for b in net.biases:
            b += 0.1 * rng.standard_normal(b.shape)
    z = forward(p.phi, x)
    tm = mirror_twins(z, t)
    return x, t, y, p, tm, hp


def test_loss_terms_scalar_oracle():
    x, t, y, p, tm, hp = tiny_instance(0)
    total, terms = compound_loss(p, x, t, y, tm, hp)
    z = forward(p.phi, x)
    n0 = int(np.sum(t == 0))
    n1 = len(t) - n0
    own = sum((float(forward(p.h0, z[i])[0]) - y[i]) ** 2 for i in range(len(t)) if t[i] == 0) / n0
    cross = sum((1 + hp.beta * tm.weight[i]) * (float(forward(p.h1, z[i])[0]) - y[i]) ** 2
                for i in range(len(t)) if t[i] == 1) / (n1 + hp.beta * n0)
    cf = hp.alpha / n0 * sum(np.sum((z[i] - z[tm.twin_index[i]]) ** 2)
                             for i in range(len(t)) if t[i] == 0)
    reg = hp.gamma * param_norm_sq(*p.networks())
    assert np.isclose(terms["own_factual"], own)
    assert np.isclose(terms["cross_factual"], cross)
    assert np.isclose(terms["counterfactualizability"], cf)
    assert np.isclose(terms["regularization"], reg)
    assert np.isclose(total, own + cross + cf + reg)


@pytest.mark.parametrize("normalize", [False, True])
def test_compound_loss_gradients_finite_differences(normalize):
    x, t, y, p, tm, hp = tiny_instance(1, normalize=normalize)
    _, _, grads = compound_loss_grads(p, x, t, y, tm, hp)
    params = _flat_params(p)
    h = 1e-6
    worst = 0.0
    for prm, g in zip(params, grads):
        it = np.nditer(prm, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = prm[idx]
            prm[idx] = old + h
            up, _ = compound_loss(p, x, t, y, tm, hp)
            prm[idx] = old - h
            down, _ = compound_loss(p, x, t, y, tm, hp)
            prm[idx] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-6))
    assert worst < 1e-4


def test_role_mirror_symmetry():
    x, t, y, p, tm, hp = tiny_instance(2)
    p_treat = Pipeline(p.phi, p.h0, p.h1, "treatment_driven")
    p_mirror = Pipeline(p.phi, p.h1, p.h0, "control_driven")
    total_a, _ = compound_loss(p_treat, x, t, y, tm, hp)
    total_b, _ = compound_loss(p_mirror, x, 1 - t, y, tm, hp)
    assert np.isclose(total_a, total_b)


def test_batch_losses_sum_to_full_loss():
    x, t, y, p, tm, hp = tiny_instance(3)
    full, terms = compound_loss(p, x, t, y, tm, hp)
    reg = terms["regularization"]
    batches = [np.arange(0, 7), np.arange(7, len(t))]
    part = sum(compound_loss(p, x, t, y, tm, hp, batch=b)[0] for b in batches)
    # the regularizer is shared, every other term is additive over batches
    assert np.isclose(part, full + reg)


def test_focus_arm_orientation():
    x, t, y, p, tm, hp = tiny_instance(4)
    assert p.focus_arm == 0
    # zeroing the treated arm's head must not change the own-factual term
    _, terms = compound_loss(p, x, t, y, tm, hp)
    p2 = p.copy()
    for w in p2.h1.weights:
        w[...] = 0.0
    _, terms2 = compound_loss(p2, x, t, y, tm, hp)
    assert np.isclose(terms["own_factual"], terms2["own_factual"])
    assert not np.isclose(terms["cross_factual"], terms2["cross_factual"])


def test_predict_tau_is_head_difference():
    x, t, y, p, tm, hp = tiny_instance(5)
    z = forward(p.phi, x)
    expect = forward(p.h1, z)[:, 0] - forward(p.h0, z)[:, 0]
    assert np.allclose(predict_tau(p, x), expect)
    assert np.isclose(predict_tau(p, x[0]), expect[0])


def test_predict_mu_per_arm():
    x, t, y, p, tm, hp = tiny_instance(6)
    z = forward(p.phi, x)
    mu = predict_mu(p, x, t)
    expect = np.where(t == 1, forward(p.h1, z)[:, 0], forward(p.h0, z)[:, 0])
    assert np.allclose(mu, expect)


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        PipelineHyperparams(alpha=-1)
    with pytest.raises(ValueError):
        PipelineHyperparams(embed_layers=0)
    with pytest.raises(ValueError):
        PipelineHyperparams(base_lr=0)


def test_train_pipeline_smoke_and_retention():
    ds, _ = generate_ihdp_like(0, n=120, d=4, noise_scale=0.3)
    sp = split(ds, 0.2, 0.3, 0)
    hp = PipelineHyperparams(alpha=0.1, beta=0.1, embed_layers=1, head_layers=1,
                             batch_size=50, epochs=12)
    p, report = train_pipeline(ds, sp, "control_driven", hp, seed=0)
    assert len(report.val_mse) == 13  # init + 12 epochs
    assert report.retained_epoch == int(np.argmin(report.val_mse))
    # retained parameters must reproduce the best validation score
    best = min(report.val_mse)
    mse = factual_mse(p, ds, sp.validation)
    # factual_mse is in original units, val_mse in standardized units
    assert np.isclose(mse / p.scaler.y_scale**2, best, rtol=1e-9)
    assert np.all(np.isfinite(predict_tau(p, ds.x[sp.test])))


def test_train_pipeline_deterministic():
    ds, _ = generate_ihdp_like(1, n=100, d=3, noise_scale=0.3)
    sp = split(ds, 0.2, 0.3, 1)
    hp = PipelineHyperparams(embed_layers=1, head_layers=1, batch_size=50, epochs=4)
    pa, _ = train_pipeline(ds, sp, "treatment_driven", hp, seed=5)
    pb, _ = train_pipeline(ds, sp, "treatment_driven", hp, seed=5)
    assert np.array_equal(predict_tau(pa, ds.x), predict_tau(pb, ds.x))


def test_train_rejects_degenerate_split():
    ds, _ = generate_ihdp_like(2, n=100, d=3)
    sp = split(ds, 0.2, 0.3, 0)
    bad = SplitIndices(np.flatnonzero(ds.t == 0)[:30], sp.validation, sp.test)
    hp = PipelineHyperparams(epochs=1)
    with pytest.raises(Exception, match="arm"):
        train_pipeline(ds, bad, "control_driven", hp, seed=0)
