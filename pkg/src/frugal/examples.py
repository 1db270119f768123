"""Ready-made model specifications with known analytic or published answers.

These are the worked models used by the reproduction targets of the CLI and
by the test suite: a fully Gaussian model with closed-form joint, a fully
binary odds-ratio model with a known observational conditional, a mixed
copula MSM with published inverse-probability-weighting results, a
latent-variable vine model, discrete-time survival scenarios, SNMM tables,
and an instrumental-variables model.
"""

from __future__ import annotations

import numpy as np

from frugal.construct import GaussianFrugal
from frugal.dependence import CopulaSpec, OddsRatioSpec, PairSpec, VineSpec
from frugal.model import (
    DummyTreatmentSpec,
    DummyVar,
    FrugalModel,
    KernelSpec,
    LinearPredictor,
    VariableSpec,
)
from frugal.sample import IvSpec
from frugal.sequential import SnmmSpec, SurvivalSpec


def _lp(intercept=0.0, **terms):
    """Linear predictor from keyword coefficients; 'a:b' keys interact."""
    out = []
    for k, v in terms.items():
        out.append((tuple(k.split(":")), float(v)))
    return LinearPredictor(intercept=float(intercept), terms=tuple(out))


# ---------------------------------------------------------------------------
# fully Gaussian model (closed-form joint)


def gaussian_example() -> GaussianFrugal:
    return GaussianFrugal(
        tau2=1.0, upsilon2=1.0, rho=0.5, beta=0.4, sigma2=1.0, alpha=0.3
    )


# ---------------------------------------------------------------------------
# fully binary model with odds-ratio association


def binary_or_model() -> FrugalModel:
    """Two binary treatments, one binary covariate, odds-ratio association.

    The implied observational conditional is
    logit p(y=1 | a, b) = -0.245 + 0.432 a - 0.500 b + 0.846 ab
    (coefficients rounded to three decimals).
    """
    past = (
        VariableSpec("a", "bernoulli", "logit", _lp(0.0), treatment=True),
        VariableSpec("l", "bernoulli", "logit", _lp(-1.0, a=2.0)),
        VariableSpec("b", "bernoulli", "logit", _lp(1.0, a=-1.0, l=-2.0, **{"a:l": 1.0}),
                     treatment=True),
    )
    outcome = VariableSpec("y", "bernoulli", "logit",
                           _lp(-1.0, a=1.0, **{"a:b": 1.0}))
    # association on the log-linear interaction scale lambda = log(OR)/4
    # with lambda = 1 + a - 2b + ab, hence the quadrupled coefficients
    dep = OddsRatioSpec(_lp(4.0, a=4.0, b=-8.0, **{"a:b": 4.0}), with_="l")
    dummy = DummyTreatmentSpec(
        (("a", DummyVar("bernoulli", p=0.5)), ("b", DummyVar("bernoulli", p=0.5)))
    )
    return FrugalModel(past, outcome, KernelSpec("marginal"), dummy, dep)


BINARY_OR_OBS_LOGIT = (-0.245, 0.432, -0.500, 0.846)


# ---------------------------------------------------------------------------
# mixed copula marginal structural model (continuous covariate and outcome)


def copula_msm_model() -> FrugalModel:
    """Gaussian outcome MSM with exponential covariate and Gaussian copula.

    Interventional mean of Y is -0.5 + 0.2a + 0.3b with unit variance; the
    copula correlation between Y and L is 2*expit(2) - 1 (about 0.76) in
    every treatment cell.
    """
    past = (
        VariableSpec("a", "bernoulli", "logit", _lp(0.0), treatment=True),
        VariableSpec("l", "exponential", "log", _lp(-0.3, a=0.2)),
        VariableSpec("b", "bernoulli", "logit", _lp(-0.3, a=0.4, l=0.3),
                     treatment=True),
    )
    outcome = VariableSpec("y", "gaussian", "identity",
                           _lp(-0.5, a=0.2, b=0.3, **{"a:b": 0.0}),
                           variance=1.0)
    dep = CopulaSpec("gaussian", _lp(2.0), with_="l")
    dummy = DummyTreatmentSpec(
        (("a", DummyVar("bernoulli", p=0.5)), ("b", DummyVar("bernoulli", p=0.5)))
    )
    return FrugalModel(past, outcome, KernelSpec("marginal"), dummy, dep)


COPULA_MSM_TRUTH = {"intercept": -0.5, "a": 0.2, "b": 0.3, "a:b": 0.0}

# published IPW fit at n = 10^6: estimate (standard error) per coefficient
COPULA_MSM_IPW_PUBLISHED = {
    "intercept": (-0.4985, 0.0022),
    "a": (0.1999, 0.0033),
    "b": (0.3002, 0.0030),
    "a:b": (-0.0030, 0.0042),
}

# single-dataset comparison at n = 10^4: (estimate, SE, bias) per method
LARGE_SAMPLE_COMPARISON = {
    "or": {"intercept": (-0.56, 0.021, -0.064), "a": (0.16, 0.030, -0.044),
           "b": (0.45, 0.028, 0.148), "a:b": (0.05, 0.040, 0.047)},
    "ipw": {"intercept": (-0.49, 0.021, 0.011), "a": (0.20, 0.032, -0.004),
            "b": (0.30, 0.029, 0.002), "a:b": (0.00, 0.042, 0.003)},
    "dr": {"intercept": (-0.49, 0.020, 0.008), "a": (0.19, 0.027, -0.005),
           "b": (0.31, 0.028, 0.006), "a:b": (0.01, 0.050, 0.007)},
    "mle": {"intercept": (-0.49, 0.019, 0.010), "a": (0.19, 0.027, -0.005),
            "b": (0.30, 0.026, 0.002), "a:b": (0.01, 0.034, 0.010)},
}

# replicated-study comparison, N = 1000 runs at n = 250:
# (bias, cover90, sec) per coefficient and method
STUDY_TABLE_PUBLISHED = {
    "or": {"intercept": (-0.0769, 0.837, 1.21), "a": (-0.0303, 0.880, 1.03),
           "b": (0.1538, 0.755, 1.33), "a:b": (0.0220, 0.901, 1.00)},
    "ipw": {"intercept": (0.0038, 0.905, 0.99), "a": (-0.0096, 0.932, 0.93),
            "b": (-0.0018, 0.935, 0.91), "a:b": (0.0038, 0.942, 0.85)},
    "dr": {"intercept": (0.0046, 0.879, 1.06), "a": (-0.0098, 0.876, 1.08),
           "b": (-0.0014, 0.919, 0.97), "a:b": (0.0054, 0.982, 0.69)},
    "mle": {"intercept": (0.0046, 0.882, 1.06), "a": (-0.0071, 0.891, 1.03),
            "b": (-0.0026, 0.898, 1.02), "a:b": (0.0040, 0.893, 1.01)},
}


MSM_TERMS = (("a",), ("b",), ("a", "b"))

MSM_TREAT_TERMS = {
    "a": ((), ()),
    "b": ((("a",),), (("a",), ("l",))),
}


def msm_study_scenario() -> dict:
    """Scenario dict consumed by ``frugal.fit.run_study``."""
    return {
        "model": copula_msm_model(),
        "truth": COPULA_MSM_TRUTH,
        "msm_terms": MSM_TERMS,
        "treat_terms": MSM_TREAT_TERMS,
        "outcome_terms": MSM_TERMS,
        "methods": ("or", "ipw", "dr", "mle"),
        "mle_param_of": {
            "intercept": "y.intercept", "a": "y.a", "b": "y.b", "a:b": "y.a:b"
        },
    }


# ---------------------------------------------------------------------------
# latent-variable vine model (exponential outcome, hidden U)


def vine_latent_model() -> FrugalModel:
    """Hidden uniform U in a Gaussian D-vine (U, L, Y) with exponential L, Y."""
    past = (
        VariableSpec("u", "uniform"),
        VariableSpec("a", "bernoulli", "logit", _lp(0.0), treatment=True),
        VariableSpec("l", "exponential", "log", _lp(-0.3, a=0.2)),
        VariableSpec("b", "bernoulli", "logit", _lp(-0.3, a=0.4, l=0.3),
                     treatment=True),
    )
    outcome = VariableSpec("y", "exponential", "log", _lp(0.5, a=-0.2, b=-0.3))
    dep = VineSpec(
        order=("l", "u", "y"),
        pairs=(
            PairSpec(("u", "l"), (), "gaussian", _lp(1.0)),
            PairSpec(("u", "y"), (), "gaussian", _lp(1.0)),
            PairSpec(("l", "y"), ("u",), "gaussian", _lp(0.5)),
        ),
    )
    dummy = DummyTreatmentSpec(
        (("a", DummyVar("bernoulli", p=0.5)), ("b", DummyVar("bernoulli", p=0.5)))
    )
    return FrugalModel(past, outcome, KernelSpec("marginal"), dummy, dep)


VINE_MSM_TRUTH = {"intercept": -0.5, "a": 0.2, "b": 0.3, "a:b": 0.0}

# published IPW fit at n = 10^4 (robust standard errors)
VINE_IPW_PUBLISHED = {
    "intercept": (-0.514, 0.022),
    "a": (0.202, 0.032),
    "b": (0.293, 0.029),
    "a:b": (0.003, 0.042),
}


# ---------------------------------------------------------------------------
# discrete-time survival scenarios


def survival_rows() -> tuple[dict, ...]:
    """Published survival scenarios: per row the covariate-feedback strength
    beta1, the confounding strength alpha0, and the marginal log hazard
    ratio psi0 (psi1 = 0, psi01 implied)."""
    rows = (
        (-2.0, -2.0, -0.79955),
        (-0.5, -0.5, -0.79957),
        (0.0, -0.5, -0.79957),
        (-0.5, 0.0, -0.79950),
        (0.5, -2.0, -0.79955),
        (2.0, -2.0, -0.79955),
    )
    out = []
    for beta1, alpha0, psi0 in rows:
        out.append({
            "beta1": beta1,
            "alpha0": alpha0,
            "psi0": psi0,
            "spec": SurvivalSpec(
                T=20, alpha_star=0.5, alpha0=alpha0, beta1=beta1,
                theta_star=-7.0, theta_l0=-0.8, psi0=psi0, psi1=0.0,
            ),
        })
    return tuple(out)


# ---------------------------------------------------------------------------
# structural nested mean models


def snmm_example_single_period() -> SnmmSpec:
    """T = 2 SNMM with a degenerate first covariate (always zero)."""
    return SnmmSpec(
        T=2,
        p_l=(_lp(1e-12), _lp(0.4, a1=-0.1)),
        p_a=(_lp(0.3), _lp(0.2, a1=0.3, l2=0.3)),
        baseline=_lp(0.2),
        blips=(_lp(0.1), _lp(0.0, a1=0.1, l2=0.05)),
        log_ors=(_lp(0.1, a1=0.1),),
    )


# (a1, l2, a2) -> p(y=1 | l1=0, a1, l2, a2); published to three decimals
SNMM_TABLE_SINGLE = {
    (0, 0, 0): 0.194, (1, 0, 0): 0.287, (0, 1, 0): 0.210, (1, 1, 0): 0.330,
    (0, 0, 1): 0.194, (1, 0, 1): 0.387, (0, 1, 1): 0.260, (1, 1, 1): 0.480,
}


def snmm_example_two_period() -> SnmmSpec:
    """T = 2 SNMM with a non-degenerate first covariate."""
    # the indicator 1{a1 = l1} expands to 1 - a1 - l1 + 2 a1 l1 for binaries
    log_or = _lp(0.2, a1=-0.1, l1=-0.1, **{"a1:l1": 0.2})
    return SnmmSpec(
        T=2,
        p_l=(_lp(0.5), _lp(0.4, l1=0.3, a1=-0.1, **{"l1:a1": -0.2})),
        p_a=(_lp(0.3, l1=0.3), _lp(0.2, a1=0.3, l2=0.3)),
        baseline=_lp(0.2),
        blips=(_lp(0.1, l1=0.1), _lp(0.0, l1=0.05, l2=0.05, a1=0.1)),
        log_ors=(log_or,),
    )


# (l1, l2, a1, a2) -> p(y=1 | history); published to three decimals
SNMM_TABLE_TWO = {
    (0, 0, 0, 0): 0.187, (1, 0, 0, 0): 0.189, (0, 1, 0, 0): 0.219,
    (1, 1, 0, 0): 0.205, (0, 0, 1, 0): 0.294, (1, 0, 1, 0): 0.381,
    (0, 1, 1, 0): 0.315, (1, 1, 1, 0): 0.429, (0, 0, 0, 1): 0.187,
    (1, 0, 0, 1): 0.239, (0, 1, 0, 1): 0.269, (1, 1, 0, 1): 0.305,
    (0, 0, 1, 1): 0.394, (1, 0, 1, 1): 0.531, (0, 1, 1, 1): 0.465,
    (1, 1, 1, 1): 0.629,
}


# ---------------------------------------------------------------------------
# instrumental variables


IV_BETA = 0.4  # structural effect of x on y in the linear-Gaussian model


def iv_gaussian_model() -> IvSpec:
    """Linear-Gaussian instrumental-variables model with hidden confounder U.

    Z instruments X; U confounds X and Y through a Gaussian copula. In this
    all-linear model Cov(Z,Y)/Cov(Z,X) recovers the structural slope exactly.
    """
    past = (
        VariableSpec("u", "gaussian", "identity", _lp(0.0), variance=1.0),
        VariableSpec("z", "gaussian", "identity", _lp(0.0), variance=1.0),
        VariableSpec("x", "gaussian", "identity", _lp(0.0, u=0.5, z=0.6),
                     treatment=True, variance=1.0),
    )
    outcome = VariableSpec("y", "gaussian", "identity", _lp(0.0, x=IV_BETA),
                           variance=1.0)
    dep = CopulaSpec("gaussian", _lp(1.0), with_="u")
    dummy = DummyTreatmentSpec((("x", DummyVar("gaussian", mean=0.0,
                                               variance=10.0)),))
    model = FrugalModel(past, outcome, KernelSpec("marginal"), dummy, dep)
    return IvSpec(model=model, u_name="u", z_name="z")


def iv_binary_outcome_model() -> IvSpec:
    """IV model with the continuous outcome dichotomized at the median.

    The outcome margin is declared binary with probit-style success
    probability; the Gaussian copula with U still carries the confounding.
    """
    past = (
        VariableSpec("u", "gaussian", "identity", _lp(0.0), variance=1.0),
        VariableSpec("z", "gaussian", "identity", _lp(0.0), variance=1.0),
        VariableSpec("x", "gaussian", "identity", _lp(0.0, u=0.5, z=0.6),
                     treatment=True, variance=1.0),
    )
    outcome = VariableSpec("y", "bernoulli", "logit", _lp(0.0, x=IV_BETA))
    dep = CopulaSpec("gaussian", _lp(1.0), with_="u")
    dummy = DummyTreatmentSpec((("x", DummyVar("gaussian", mean=0.0,
                                               variance=10.0)),))
    model = FrugalModel(past, outcome, KernelSpec("marginal"), dummy, dep)
    return IvSpec(model=model, u_name="u", z_name="z")
