"""Dependence measures: 2x2 odds-ratio algebra, copulas, vines, IPF."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from frugal.dependence import (
    CopulaSpec,
    PairSpec,
    ProbabilityTable,
    VineSpec,
    copula_density,
    copula_h,
    copula_h_inv,
    copula_sample_pair,
    dichotomized_prob,
    frank_theta_from_tau,
    ipf_fit,
    joint_cells,
    joint_from_margins_and_or,
    or_2x2,
    vine_density,
    vine_sample_arrays,
)
from frugal.model import LinearPredictor, ModelError

probs = st.floats(0.02, 0.98)
log_ors = st.floats(-4.0, 4.0)


# ---------------------------------------------------------------------------
# 2x2 joint from margins and odds ratio


def _joint_cells_oracle(p_y, p_z, psi):
    """Independent root-finding oracle for the 2x2 cell solve."""

    def f(p11):
        p10, p01 = p_y - p11, p_z - p11
        p00 = 1 - p11 - p10 - p01
        return p11 * p00 - psi * p10 * p01

    lo = max(0.0, p_y + p_z - 1.0) + 1e-12
    hi = min(p_y, p_z) - 1e-12
    return optimize.brentq(f, lo, hi, xtol=1e-14)


@settings(max_examples=200, deadline=None)
@given(p_y=probs, p_z=probs, log_psi=log_ors)
def test_joint_cells_matches_root_finding_oracle(p_y, p_z, log_psi):
    psi = np.exp(log_psi)
    p11, p10, p01, p00 = joint_cells(p_y, p_z, psi)
    assert float(p11) == pytest.approx(_joint_cells_oracle(p_y, p_z, psi), abs=1e-9)
    assert float(p11 + p10) == pytest.approx(p_y, abs=1e-12)
    assert float(p11 + p01) == pytest.approx(p_z, abs=1e-12)
    assert min(p11, p10, p01, p00) >= -1e-12


def test_joint_cells_independence_at_unit_odds_ratio():
    p11, *_ = joint_cells(0.3, 0.6, 1.0)
    assert float(p11) == pytest.approx(0.18, abs=1e-14)


@settings(max_examples=200, deadline=None)
@given(p_y=probs, p_z=probs, log_psi=log_ors)
def test_margins_and_or_round_trip(p_y, p_z, log_psi):
    tab = joint_from_margins_and_or(p_y, p_z, log_psi)
    assert or_2x2(tab) == pytest.approx(log_psi, abs=1e-8)
    assert float(tab.probs.sum()) == pytest.approx(1.0, abs=1e-12)
    # axes are (y, z): row margin is the y margin
    assert float(tab.probs[1].sum()) == pytest.approx(p_y, abs=1e-12)
    assert float(tab.probs[:, 1].sum()) == pytest.approx(p_z, abs=1e-12)


def test_or_2x2_rejects_zero_cells():
    with pytest.raises(ModelError):
        or_2x2(np.array([[0.5, 0.0], [0.25, 0.25]]))


@settings(max_examples=300, deadline=None)
@given(
    p_y=probs,
    p_z=probs,
    log_psi=log_ors,
    gy=st.floats(0.1, 10.0),
    gz=st.floats(0.1, 10.0),
)
def test_odds_ratio_invariant_to_margin_reweighting(p_y, p_z, log_psi, gy, gz):
    """Multiplying rows by f(y) and columns by g(z) leaves the OR unchanged."""
    tab = joint_from_margins_and_or(p_y, p_z, log_psi)
    p = tab.probs * np.array([[1.0], [gy]]) * np.array([[1.0, gz]])
    p = p / p.sum()
    assert or_2x2(p) == pytest.approx(log_psi, abs=1e-8)


# ---------------------------------------------------------------------------
# probability tables


def test_probability_table_margin_and_condition():
    p = np.arange(1, 9, dtype=float).reshape(2, 2, 2)
    p /= p.sum()
    tab = ProbabilityTable(axes=("a", "b", "c"), probs=p)
    mb = tab.margin(("b",))
    assert np.allclose(mb.probs, p.sum(axis=(0, 2)))
    # margin respects requested order
    mba = tab.margin(("c", "a"))
    assert mba.axes == ("c", "a")
    assert np.allclose(mba.probs, p.sum(axis=1).T)
    cond = tab.condition(a=1)
    assert cond.axes == ("b", "c")
    assert np.allclose(cond.probs, p[1] / p[1].sum())


def test_probability_table_validates_mass():
    with pytest.raises(ModelError):
        ProbabilityTable(axes=("a",), probs=np.array([0.5, 0.6]))
    with pytest.raises(ModelError):
        ProbabilityTable(axes=("a", "b"), probs=np.full((2, 2), 0.25),
                         conditional=True)


# ---------------------------------------------------------------------------
# iterative proportional fitting


@settings(max_examples=100, deadline=None)
@given(p_y=probs, p_z=probs, log_psi=st.floats(-3, 3), r1=probs, c1=probs)
def test_ipf_matches_margins_and_preserves_odds_ratio(p_y, p_z, log_psi, r1, c1):
    seed = joint_from_margins_and_or(p_y, p_z, log_psi)
    fitted = ipf_fit((np.array([1 - r1, r1]), np.array([1 - c1, c1])), seed)
    assert np.allclose(fitted.probs.sum(axis=1), [1 - r1, r1], atol=1e-9)
    assert np.allclose(fitted.probs.sum(axis=0), [1 - c1, c1], atol=1e-9)
    assert or_2x2(fitted.probs) == pytest.approx(log_psi, abs=1e-6)


def test_ipf_rejects_nonpositive_inputs():
    seed = np.full((2, 2), 0.25)
    with pytest.raises(ModelError):
        ipf_fit((np.array([0.0, 1.0]), np.array([0.5, 0.5])), seed)


# ---------------------------------------------------------------------------
# copulas


@settings(max_examples=60, deadline=None)
@given(
    u=st.floats(0.02, 0.98),
    v=st.floats(0.02, 0.98),
    rho=st.floats(-0.95, 0.95),
)
def test_gaussian_copula_h_is_conditional_cdf(u, v, rho):
    """h(u | v) equals the numerically integrated conditional CDF."""
    num, _ = integrate.quad(
        lambda t: float(copula_density("gaussian", t, v, rho)), 0.0, u
    )
    assert float(copula_h("gaussian", u, v, rho)) == pytest.approx(num, abs=1e-7)


@settings(max_examples=150, deadline=None)
@given(
    w=st.floats(0.01, 0.99),
    v=st.floats(0.02, 0.98),
    rho=st.floats(-0.95, 0.95),
)
def test_gaussian_copula_h_inverse_round_trip(w, v, rho):
    u = copula_h_inv("gaussian", w, v, rho)
    assert float(copula_h("gaussian", u, v, rho)) == pytest.approx(w, abs=1e-8)


@pytest.mark.parametrize("family,theta", [
    ("gaussian", 0.6), ("clayton", 2.0), ("frank", 4.0),
])
def test_copula_density_normalizes(family, theta):
    total, _ = integrate.dblquad(
        lambda u, v: float(copula_density(family, u, v, theta)),
        0.001, 0.999, 0.001, 0.999,
    )
    assert total == pytest.approx(1.0, abs=5e-3)


def test_gaussian_copula_density_matches_closed_form():
    rho = 0.5
    u, v = 0.3, 0.7
    x, y = stats.norm.ppf(u), stats.norm.ppf(v)
    expected = np.exp(
        -(rho**2 * (x**2 + y**2) - 2 * rho * x * y) / (2 * (1 - rho**2))
    ) / np.sqrt(1 - rho**2)
    assert float(copula_density("gaussian", u, v, rho)) == pytest.approx(expected)


def test_copula_sample_pair_hits_target_rank_correlation():
    spec = CopulaSpec(family="gaussian",
                      param_predictor=LinearPredictor(intercept=1.0))
    rho = 2 / (1 + np.exp(-1.0)) - 1  # link: 2*expit(eta) - 1
    uv = copula_sample_pair(spec, n=40_000, seed=11)
    u, v = uv[:, 0], uv[:, 1]
    r = stats.pearsonr(stats.norm.ppf(u), stats.norm.ppf(v)).statistic
    assert r == pytest.approx(rho, abs=0.02)


def test_frank_theta_from_tau_inverts_kendall_map():
    theta = frank_theta_from_tau(0.4)
    # check by simulation-free numerical Kendall tau of the Frank copula
    tau = 1 - 4 / theta * (
        1 - integrate.quad(lambda t: t / np.expm1(t), 0, theta)[0] / theta
    )
    assert tau == pytest.approx(0.4, abs=1e-6)


@settings(max_examples=80, deadline=None)
@given(p=probs, rho=st.floats(-0.9, 0.9))
def test_dichotomized_prob_averages_back_to_margin(p, rho):
    """E_u[P(binary=1 | u)] must return the binary margin."""
    val, _ = integrate.quad(lambda u: float(dichotomized_prob(p, u, rho)), 0, 1)
    assert val == pytest.approx(p, abs=1e-6)


def test_dichotomized_prob_monotone_in_quantile_for_positive_rho():
    u = np.linspace(0.05, 0.95, 19)
    vals = dichotomized_prob(0.3, u, 0.6)
    assert np.all(np.diff(vals) > 0)


# ---------------------------------------------------------------------------
# vines


def _vine_3d():
    pairs = (
        PairSpec(pair=("l", "u"), conditioned=(), family="gaussian",
                 param_predictor=LinearPredictor(intercept=1.0)),
        PairSpec(pair=("u", "y"), conditioned=(), family="gaussian",
                 param_predictor=LinearPredictor(intercept=1.0)),
        PairSpec(pair=("l", "y"), conditioned=("u",), family="gaussian",
                 param_predictor=LinearPredictor(intercept=0.5)),
    )
    return VineSpec(order=("l", "u", "y"), pairs=pairs)


def test_vine_density_normalizes():
    """Uniform Monte Carlo of the density integrates to one.

    A fixed grid is useless here: the copula mass piles up at the corners
    of the cube, so a rectangle rule misses (or over-counts) it badly.
    """
    spec = _vine_3d()
    fams, params = spec.tree_params({})
    rng = np.random.default_rng(7)
    dens = vine_density(fams, params, rng.random((500_000, 3)))
    se = float(dens.std() / np.sqrt(len(dens)))
    assert float(dens.mean()) == pytest.approx(1.0, abs=max(4 * se, 1e-3))


def test_vine_sample_reproduces_pair_correlations():
    spec = _vine_3d()
    fams, params = spec.tree_params({})
    rng = np.random.default_rng(3)
    u = vine_sample_arrays(fams, params, rng.random((60_000, 3)))
    z = stats.norm.ppf(u)
    rho = 2 / (1 + np.exp(-1.0)) - 1
    # unconditioned tree-1 pairs: (l, u) and (u, y)
    assert np.corrcoef(z[:, 0], z[:, 1])[0, 1] == pytest.approx(rho, abs=0.02)
    assert np.corrcoef(z[:, 1], z[:, 2])[0, 1] == pytest.approx(rho, abs=0.02)
    # tree 2 carries the partial correlation of (l, y) given u
    r_partial = 2 / (1 + np.exp(-0.5)) - 1
    c = np.corrcoef(z.T)
    num = c[0, 2] - c[0, 1] * c[1, 2]
    den = np.sqrt((1 - c[0, 1] ** 2) * (1 - c[1, 2] ** 2))
    assert num / den == pytest.approx(r_partial, abs=0.02)


def test_vine_margins_are_uniform():
    spec = _vine_3d()
    fams, params = spec.tree_params({})
    rng = np.random.default_rng(8)
    u = vine_sample_arrays(fams, params, rng.random((50_000, 3)))
    for j in range(3):
        assert u[:, j].mean() == pytest.approx(0.5, abs=0.01)
        assert u[:, j].var() == pytest.approx(1 / 12, abs=0.005)
