"""Estimation: design matrices, GLM solvers, likelihood, IPW/DR/MLE, studies."""

import numpy as np
import pytest
from scipy import optimize

from frugal import examples
from frugal.fit import (
    design_matrix,
    dr_fit,
    firth_logistic_irls,
    get_theta,
    ipw_fit,
    logistic_irls,
    loglik,
    loglik_rows,
    mle_fit,
    outcome_regression_fit,
    param_map,
    sec_metric,
    set_theta,
    stabilized_weights,
    term_names,
    weighted_exp_glm,
    wls_hc0,
)
from frugal.model import ModelError
from frugal.sample import rejection_resample, sample_causal


# ---------------------------------------------------------------------------
# design matrices


def test_design_matrix_and_term_names():
    data = {"a": np.array([0.0, 1.0]), "b": np.array([2.0, 3.0])}
    X = design_matrix((("a",), ("a", "b")), data)
    assert np.allclose(X, [[1, 0, 0], [1, 1, 3]])
    assert term_names((("a",), ("a", "b"))) == ["intercept", "a", "a:b"]


# ---------------------------------------------------------------------------
# GLM solvers against independent optimizers


def _logistic_oracle(X, y, w):
    def nll(b):
        eta = X @ b
        return -np.sum(w * (y * eta - np.logaddexp(0.0, eta)))

    res = optimize.minimize(nll, np.zeros(X.shape[1]), method="BFGS",
                            options={"gtol": 1e-10})
    return res.x


def test_logistic_irls_matches_direct_optimum():
    rng = np.random.default_rng(0)
    n = 600
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.binomial(1, 0.4, n)])
    p = 1 / (1 + np.exp(-(0.3 - 0.8 * X[:, 1] + 0.5 * X[:, 2])))
    y = (rng.random(n) < p).astype(float)
    w = rng.uniform(0.5, 2.0, n)
    beta, fitted = logistic_irls(X, y, weights=w)
    assert np.allclose(beta, _logistic_oracle(X, y, w), atol=1e-6)
    assert np.allclose(fitted, 1 / (1 + np.exp(-X @ beta)))


def test_firth_logistic_matches_2x2_closed_form():
    """For a saturated binary design the penalized fit has a closed form:
    add one half to every cell of the 2x2 events table."""
    x = np.tile([0.0, 1.0], 20)
    y = np.zeros(40)
    y[np.where(x == 0)[0][:2]] = 1.0  # two events, both in arm 0
    X = np.column_stack([np.ones(40), x])
    beta, _ = firth_logistic_irls(X, y)
    n0, n1, e0, e1 = 20, 20, 2, 0
    want = (np.log((e1 + 0.5) / (n1 - e1 + 0.5))
            - np.log((e0 + 0.5) / (n0 - e0 + 0.5)))
    assert beta[1] == pytest.approx(want, abs=1e-8)
    assert beta[0] == pytest.approx(np.log((e0 + 0.5) / (n0 - e0 + 0.5)),
                                    abs=1e-8)


def test_firth_logistic_agrees_with_mle_when_events_are_plentiful():
    rng = np.random.default_rng(1)
    n = 20_000
    x = rng.normal(size=n)
    y = (rng.random(n) < 1 / (1 + np.exp(-(0.2 + 0.5 * x)))).astype(float)
    X = np.column_stack([np.ones(n), x])
    b_mle, _ = logistic_irls(X, y)
    b_fir, _ = firth_logistic_irls(X, y)
    assert np.allclose(b_mle, b_fir, atol=2e-4)


def test_firth_separated_data_stays_finite():
    # complete separation: MLE diverges, the penalized fit must not
    x = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    y = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    X = np.column_stack([np.ones(6), x])
    beta, _ = firth_logistic_irls(X, y)
    assert np.all(np.isfinite(beta))
    assert abs(beta[1]) < 10


def test_wls_hc0_matches_closed_form():
    rng = np.random.default_rng(2)
    n = 400
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = X @ np.array([1.0, -2.0]) + rng.normal(size=n)
    w = rng.uniform(0.2, 3.0, n)
    beta, cov = wls_hc0(X, y, w)
    direct = np.linalg.solve(X.T @ (X * w[:, None]), X.T @ (w * y))
    assert np.allclose(beta, direct, atol=1e-10)
    resid = y - X @ beta
    bread = np.linalg.inv(X.T @ (X * w[:, None]))
    meat = (X * (w * resid)[:, None]).T @ (X * (w * resid)[:, None])
    assert np.allclose(cov, bread @ meat @ bread, atol=1e-12)


def test_weighted_exp_glm_matches_direct_optimum():
    rng = np.random.default_rng(3)
    n = 800
    X = np.column_stack([np.ones(n), rng.binomial(1, 0.5, n).astype(float)])
    mean = np.exp(-(X @ np.array([0.2, -0.5])))  # mean = exp(-X beta)
    y = rng.exponential(mean)
    w = rng.uniform(0.5, 1.5, n)

    def nll(b):
        lam = np.exp(X @ b)
        return -np.sum(w * (np.log(lam) - y * lam))

    res = optimize.minimize(nll, np.zeros(2), method="BFGS",
                            options={"gtol": 1e-10})
    beta, _ = weighted_exp_glm(X, y, w)
    assert np.allclose(beta, res.x, atol=1e-6)


# ---------------------------------------------------------------------------
# likelihood machinery


def test_loglik_rows_sum_to_loglik():
    m = examples.copula_msm_model()
    d = sample_causal(m, 200, seed=7)
    theta = get_theta(m)
    rows = loglik_rows(m, theta, d)
    assert len(rows) == 200
    assert float(rows.sum()) == pytest.approx(loglik(m, theta, d), abs=1e-9)


def test_set_get_theta_round_trip():
    m = examples.copula_msm_model()
    theta = get_theta(m)
    m2 = set_theta(m, theta + 0.0)
    assert m2 == m
    bumped = theta.copy()
    bumped[0] += 0.25
    m3 = set_theta(m, bumped)
    assert np.allclose(get_theta(m3), bumped)


def test_loglik_gradient_matches_finite_differences():
    """Numerical score at the truth for every shipped likelihood model."""
    for m in (examples.binary_or_model(), examples.copula_msm_model()):
        d = rejection_resample(m, 400, seed=8)
        theta = get_theta(m)
        k = len(theta)

        def ll(t):
            return loglik(m, t, d)

        # central differences at two step sizes: Richardson-consistent
        for i in range(k):
            e = np.zeros(k)
            e[i] = 1e-5
            g1 = (ll(theta + e) - ll(theta - e)) / 2e-5
            e[i] = 5e-6
            g2 = (ll(theta + e) - ll(theta - e)) / 1e-5
            assert g1 == pytest.approx(g2, abs=1e-5 * max(1.0, abs(g1)))


def test_param_map_labels_cover_all_pieces():
    m = examples.copula_msm_model()
    labels = [p.label for p in param_map(m)]
    assert "y.intercept" in labels
    assert any(l.startswith("dep.") for l in labels)
    assert any(l.startswith("l.") for l in labels)


# ---------------------------------------------------------------------------
# estimators


def test_stabilized_weights_mean_near_one():
    m = examples.copula_msm_model()
    d = rejection_resample(m, 20_000, seed=9)
    w = stabilized_weights(examples.MSM_TREAT_TERMS, d)
    assert w.mean() == pytest.approx(1.0, abs=0.02)
    assert np.all(w > 0)


def test_ipw_corrects_confounding_outcome_regression_does_not():
    m = examples.copula_msm_model()
    d = rejection_resample(m, 40_000, seed=10)
    fr_ipw = ipw_fit(examples.MSM_TERMS, examples.MSM_TREAT_TERMS, d)
    fr_or = outcome_regression_fit(examples.MSM_TERMS, d)
    truth = examples.COPULA_MSM_TRUTH
    for name, tv in truth.items():
        assert fr_ipw.coef(name) == pytest.approx(tv, abs=4 * fr_ipw.coef_se(name))
    # the naive fit is visibly biased on the confounded coefficient
    assert abs(fr_or.coef("b") - truth["b"]) > 4 * fr_or.coef_se("b")


def test_dr_fit_consistent_and_robust_to_outcome_model():
    m = examples.copula_msm_model()
    d = rejection_resample(m, 40_000, seed=11)
    scenario = examples.msm_study_scenario()
    fr = dr_fit(scenario["outcome_terms"], examples.MSM_TREAT_TERMS, d)
    truth = examples.COPULA_MSM_TRUTH
    for name, tv in truth.items():
        assert fr.coef(name) == pytest.approx(tv, abs=4 * fr.coef_se(name))
    # propensities correct, outcome model garbage: still consistent
    fr2 = dr_fit((("a",),), examples.MSM_TREAT_TERMS, d)
    assert fr2.coef("b") == pytest.approx(truth["b"], abs=4 * fr2.coef_se("b"))


def test_mle_recovers_truth_and_reports_convergence():
    m = examples.copula_msm_model()
    d = rejection_resample(m, 1_500, seed=12)
    fr = mle_fit(m, d)
    assert fr.converged
    truth = {"y.intercept": -0.5, "y.a": 0.2, "y.b": 0.3, "y.a:b": 0.0}
    for name, tv in truth.items():
        assert fr.coef(name) == pytest.approx(tv, abs=4 * fr.coef_se(name))


def test_sec_metric_definition_and_guards():
    est = np.array([1.1, 0.9])
    ses = np.array([0.1, 0.1])
    want = np.sqrt(np.mean((est - 1.0) ** 2 / ses**2))
    assert sec_metric(est, 1.0, ses) == pytest.approx(want)
    with pytest.raises(ModelError):
        sec_metric(est, 1.0, np.array([0.1, 0.0]))


def test_outcome_regression_rejects_rank_deficiency():
    d = {"a": np.array([1.0, 1.0, 1.0]), "y": np.array([0.0, 1.0, 2.0])}
    with pytest.raises(ModelError):
        outcome_regression_fit((("a",),), d)
