"""Auxiliary regressors, the eight proxy risks against a hand-evaluated
table, rank statistics against enumeration oracles, and candidate choice."""

import numpy as np
import pytest

from alrite.data import Dataset, GroundTruth
from alrite.propensity import PropensityModel
from alrite.selection import (PROXY_KINDS, Auxiliaries, KernelRidge,
                              fit_auxiliaries, fit_kernel_ridge_cv,
                              nn_imputed_outcome, proxy_score, rank_agreement,
                              select_candidate, _average_ranks)


class ConstPredictor:
    """Stub regressor returning a fixed value for every query."""

    def __init__(self, value):
        self.value = float(value)

    def predict(self, x):
        return np.full(len(np.atleast_2d(x)), self.value)


def half_eta(d=1) -> PropensityModel:
    return PropensityModel("logistic_regression",
                           {"weights": np.zeros(d), "bias": 0.0, "l2_strength": 0.0,
                            "x_mean": np.zeros(d), "x_scale": np.ones(d)},
                           fitted=True)


def hand_table():
    ds = Dataset(np.zeros((5, 1)), np.array([1, 0, 1, 0, 1]),
                 np.array([2.0, 1.0, 0.0, -1.0, 3.0]), ["continuous"])
    aux = Auxiliaries(
        mu0_hat=ConstPredictor(0.5), mu1_hat=ConstPredictor(1.5),
        m_hat=ConstPredictor(1.0), eta_hat=half_eta(),
        donors_x=np.array([[10.0], [20.0]]), donors_t=np.array([0, 1]),
        donors_y=np.array([5.0, 7.0]), clip=0.01)
    candidate = {"tau": np.array([1.0, 2.0, 0.0, -1.0, 1.0]),
                 "mu": np.array([1.8, 0.9, 0.2, -0.8, 2.5])}
    return ds, aux, candidate


HAND_EXPECTED = {
    "mu_risk": 0.076,
    "mu_risk_iptw": 0.152,
    "r_risk": 2.15,
    "tau_naive": 1.2,
    "tau_1nni": 29.4,
    "tau_iptw": 11.8,
    "tau_u": 8.6,
    "tau_dr": 8.6,
}


@pytest.mark.parametrize("kind", PROXY_KINDS)
def test_proxy_rows_match_hand_evaluation(kind):
    ds, aux, candidate = hand_table()
    score = proxy_score(kind, candidate, ds, np.arange(5), aux)
    assert score == pytest.approx(HAND_EXPECTED[kind], rel=1e-12)


def test_proxy_kind_mismatch_errors():
    ds, aux, candidate = hand_table()
    with pytest.raises(ValueError, match="mu"):
        proxy_score("mu_risk", {"tau": candidate["tau"]}, ds, np.arange(5), aux)
    with pytest.raises(ValueError, match="tau"):
        proxy_score("tau_dr", {"mu": candidate["mu"]}, ds, np.arange(5), aux)
    with pytest.raises(ValueError, match="unknown"):
        proxy_score("pi_risk", candidate, ds, np.arange(5), aux)


def test_mu_risk_perfect_predictor_is_zero():
    ds, aux, _ = hand_table()
    assert proxy_score("mu_risk", {"mu": ds.y.copy()}, ds, np.arange(5), aux) == 0.0


def test_tau_naive_self_consistency():
    ds, aux, _ = hand_table()
    tau = np.full(5, 1.5 - 0.5)  # the auxiliaries' own difference
    assert proxy_score("tau_naive", {"tau": tau}, ds, np.arange(5), aux) == 0.0


def test_rho_bounded_by_clip():
    ds, aux, _ = hand_table()
    rho = aux.rho(ds.x, ds.t)
    assert np.all(rho <= 1.0 / aux.clip + 1e-9)
    assert np.all(rho >= 1.0)


def test_nn_imputation_instance_space():
    _, aux, _ = hand_table()
    x = np.array([[9.0], [19.0]])
    # treated query -> control donor (10 -> y 5); control query -> treated (20 -> 7)
    out = nn_imputed_outcome(aux, x, np.array([1, 0]))
    assert list(out) == [5.0, 7.0]


def linear_dataset(seed, n=80, d=2, noise=0.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    b = rng.standard_normal(d)
    y = x @ b + noise * rng.standard_normal(n)
    t = rng.integers(0, 2, size=n)
    t[:2] = [0, 1]
    return Dataset(x, t, y, ["continuous"] * d), b


def test_kernel_ridge_fits_noiseless_linear():
    ds, _ = linear_dataset(0)
    aux = fit_auxiliaries(ds, np.arange(ds.n), seed=0)
    for model, mask in ((aux.mu0_hat, ds.t == 0), (aux.mu1_hat, ds.t == 1),
                        (aux.m_hat, np.ones(ds.n, dtype=bool))):
        mse = float(np.mean((model.predict(ds.x[mask]) - ds.y[mask]) ** 2))
        assert mse < 1e-3


def test_kernel_ridge_constant_target():
    x = np.random.default_rng(1).standard_normal((30, 2))
    model = fit_kernel_ridge_cv(x, np.full(30, 2.5), seed=0)
    assert np.allclose(model.predict(x), 2.5, atol=1e-9)
    assert np.allclose(model.predict(np.zeros((3, 2))), 2.5, atol=1e-6)


def test_fit_auxiliaries_deterministic():
    ds, _ = linear_dataset(2, noise=0.3)
    a = fit_auxiliaries(ds, np.arange(ds.n), seed=7)
    b = fit_auxiliaries(ds, np.arange(ds.n), seed=7)
    assert np.allclose(a.m_hat.predict(ds.x), b.m_hat.predict(ds.x))
    assert a.m_hat.bandwidth == b.m_hat.bandwidth


def test_kernel_ridge_serialization():
    ds, _ = linear_dataset(3)
    model = fit_kernel_ridge_cv(ds.x, ds.y, seed=0)
    clone = KernelRidge.from_dict(model.to_dict())
    assert np.allclose(clone.predict(ds.x), model.predict(ds.x))


def test_average_ranks_with_ties():
    assert list(_average_ranks(np.array([3.0, 1.0, 2.0]))) == [3.0, 1.0, 2.0]
    assert list(_average_ranks(np.array([1.0, 1.0, 2.0]))) == [1.5, 1.5, 3.0]


def test_rank_agreement_perfect_and_inverted():
    u = np.array([0.1, 0.4, 0.2, 0.9, 0.5])
    out = rank_agreement(u, u)
    assert out["spearman"] == pytest.approx(1.0)
    assert out["kendall"] == pytest.approx(1.0)
    inv = rank_agreement(u, -u)
    assert inv["spearman"] == pytest.approx(-1.0)
    assert inv["kendall"] == pytest.approx(-1.0)


def test_rank_agreement_enumeration_oracle():
    u = np.array([0.5, 0.1, 0.9, 0.3, 0.7])
    v = np.array([2.0, 1.0, 2.5, 1.5, 0.5])
    c = 5
    ru = _average_ranks(u)
    rv = _average_ranks(v)
    spearman = np.corrcoef(ru, rv)[0, 1]
    concordant = sum(np.sign(u[i] - u[j]) * np.sign(v[i] - v[j])
                     for i in range(c) for j in range(i + 1, c))
    kendall = concordant / (c * (c - 1) / 2)
    order = np.argsort(u)
    dcg = sum(2.0 ** ((rv[order[j]] - 1) / (c - 1)) / np.log(j + 2) for j in range(c))
    out = rank_agreement(u, v)
    assert out["spearman"] == pytest.approx(spearman)
    assert out["kendall"] == pytest.approx(kendall)
    assert out["dcg"] == pytest.approx(dcg)


def test_rank_agreement_monotone_invariance():
    rng = np.random.default_rng(4)
    u = rng.uniform(0.1, 2.0, size=8)
    v = rng.uniform(0.1, 2.0, size=8)
    base = rank_agreement(u, v)
    for transform in (lambda w: 2 * w + 1, lambda w: w**3):
        same = rank_agreement(u, transform(v))
        assert same == base


def test_rank_agreement_errors():
    with pytest.raises(ValueError):
        rank_agreement([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        rank_agreement([1.0], [1.0])


def test_select_candidate_basics():
    ds, aux, candidate = hand_table()
    winner, table = select_candidate([candidate], "mu_risk", ds, np.arange(5), aux)
    assert winner == 0 and len(table) == 1
    perfect = {"mu": ds.y.copy(), "tau": np.zeros(5)}
    winner, table = select_candidate([candidate, perfect, candidate], "mu_risk",
                                     ds, np.arange(5), aux)
    assert winner == 1
    assert table[1]["score"] == 0.0
    # ties keep the lowest index
    winner, _ = select_candidate([candidate, candidate], "mu_risk",
                                 ds, np.arange(5), aux)
    assert winner == 0


def test_mu_risk_selection_tracks_pehe():
    # pool of perturbed predictors: factual risk must order like true error
    wins = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        n, d = 120, 2
        x = rng.standard_normal((n, d))
        b0, b1 = rng.standard_normal(d), rng.standard_normal(d)
        mu0, mu1 = x @ b0, x @ b1
        t = rng.integers(0, 2, size=n)
        t[:2] = [0, 1]
        y = np.where(t == 1, mu1, mu0) + 0.2 * rng.standard_normal(n)
        ds = Dataset(x, t, y, ["continuous"] * d)
        truth = GroundTruth(mu0, mu1)
        candidates, pehes = [], []
        for k in range(12):
            scale = 0.05 * k
            e0 = scale * rng.standard_normal(d)
            e1 = scale * rng.standard_normal(d)
            mu0_hat, mu1_hat = x @ (b0 + e0), x @ (b1 + e1)
            tau_hat = mu1_hat - mu0_hat
            candidates.append({"tau": tau_hat,
                               "mu": np.where(t == 1, mu1_hat, mu0_hat)})
            pehes.append(float(np.mean((tau_hat - truth.tau) ** 2)))
        winner, _ = select_candidate(candidates, "mu_risk", ds, np.arange(n), None)
        if pehes[winner] <= np.quantile(pehes, 0.25):
            wins += 1
    assert wins >= 8
