"""Frugal: marginally parameterized causal models.

Specify a joint law through three variation-separated pieces — the law of
the past, a causal outcome margin, and a conditional dependence measure —
then construct, sample, and fit it exactly or by rejection.
"""

__version__ = "1.0.0"

from frugal.construct import (
    GaussianFrugal,
    causal_density,
    discrete_joint,
    gaussian_joint,
    joint_density,
    observational_density,
)
from frugal.dependence import (
    CopulaSpec,
    OddsRatioSpec,
    PairSpec,
    ProbabilityTable,
    VineSpec,
    copula_sample_pair,
    dichotomized_copula_prob,
    ipf_fit,
    joint_from_margins_and_or,
    or_2x2,
    vine_sample,
)
from frugal.fit import (
    FitResult,
    dr_fit,
    ipw_fit,
    loglik,
    mle_fit,
    outcome_regression_fit,
    run_study,
    sandwich_cov,
    sec_metric,
)
from frugal.model import (
    DummyTreatmentSpec,
    DummyVar,
    FrugalModel,
    KernelSpec,
    LinearPredictor,
    ModelError,
    VariableSpec,
    parse_model_config,
    serialize_model,
    validate_model,
)
from frugal.sample import (
    Dataset,
    IvSpec,
    build_bins,
    rejection_resample,
    sample_causal,
    sample_iv,
)
from frugal.sequential import (
    ContrastPair,
    SnmmSpec,
    SurvivalSpec,
    contrast_recover,
    gformula_survival,
    nested_frugal_build,
    snmm_joint,
    survival_simulate,
    survival_theta_from_psi,
)

__all__ = [name for name in dir() if not name.startswith("_")]
