"""Model specification layer: predictors, families, validation, config I/O."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from frugal.model import (
    DummyTreatmentSpec,
    DummyVar,
    FrugalModel,
    KernelSpec,
    LinearPredictor,
    ModelError,
    VariableSpec,
    linear_predictor_eval,
    parse_model_config,
    serialize_model,
    validate_model,
)
from frugal import examples


# ---------------------------------------------------------------------------
# linear predictors


def test_linear_predictor_eval_matches_hand_computation():
    lp = LinearPredictor(intercept=0.5, terms=((("a",), 2.0), (("a", "b"), -1.0)))
    row = {"a": 3.0, "b": 4.0}
    # 0.5 + 2*3 - 1*3*4 = -5.5
    assert linear_predictor_eval(lp, row) == pytest.approx(-5.5)


def test_linear_predictor_vectorizes_over_arrays():
    lp = LinearPredictor(intercept=1.0, terms=((("a",), 2.0),))
    out = lp.eval({"a": np.array([0.0, 1.0, 2.0])})
    assert np.allclose(out, [1.0, 3.0, 5.0])


def test_linear_predictor_missing_covariate_raises():
    lp = LinearPredictor(terms=((("a",), 1.0),))
    with pytest.raises(ModelError):
        lp.eval({"b": 1.0})


def test_linear_predictor_variables_preserve_first_seen_order():
    lp = LinearPredictor(terms=((("b", "a"), 1.0), (("c",), 2.0), (("a",), 3.0)))
    assert lp.variables() == ("b", "a", "c")


@given(
    intercept=st.floats(-5, 5),
    coefs=st.lists(st.floats(-3, 3), min_size=0, max_size=4),
    a=st.floats(-10, 10),
)
def test_linear_predictor_is_affine_in_each_coefficient(intercept, coefs, a):
    terms = tuple((("a",) * (k + 1), c) for k, c in enumerate(coefs))
    lp = LinearPredictor(intercept=intercept, terms=terms)
    expected = intercept + sum(c * a ** (k + 1) for k, c in enumerate(coefs))
    assert lp.eval({"a": a}) == pytest.approx(expected, abs=1e-9, rel=1e-9)


# ---------------------------------------------------------------------------
# family numerics


def test_bernoulli_density_is_probability_mass():
    v = VariableSpec("z", "bernoulli", "logit", LinearPredictor(intercept=0.3))
    p = float(v._param({}))
    assert p == pytest.approx(1 / (1 + np.exp(-0.3)))
    assert float(v.density(1.0, {})) == pytest.approx(p)
    assert float(v.density(0.0, {})) == pytest.approx(1 - p)


def test_gaussian_density_integrates_to_one():
    v = VariableSpec("z", "gaussian", variance=2.5,
                     predictor=LinearPredictor(intercept=-0.7))
    total, _ = integrate.quad(lambda x: float(v.density(x, {})), -30, 30)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_exponential_quantile_inverts_cdf():
    v = VariableSpec("z", "exponential", "log",
                     LinearPredictor(intercept=0.4))
    u = np.linspace(0.01, 0.99, 23)
    x = v.quantile(u, {})
    assert np.allclose(v.cdf(x, {}), u, atol=1e-12)


def test_gaussian_quantile_matches_scipy():
    v = VariableSpec("z", "gaussian", variance=4.0,
                     predictor=LinearPredictor(intercept=1.0))
    assert float(v.quantile(0.975, {})) == pytest.approx(
        stats.norm.ppf(0.975, loc=1.0, scale=2.0)
    )


def test_family_link_compatibility_enforced():
    with pytest.raises(ModelError):
        VariableSpec("z", "bernoulli", "log")
    with pytest.raises(ModelError):
        VariableSpec("z", "gaussian", "logit", variance=1.0)
    with pytest.raises(ModelError):
        VariableSpec("z", "gaussian")  # missing variance
    with pytest.raises(ModelError):
        VariableSpec("z", "categorical", levels=3, probs=(0.5, 0.5))


def test_categorical_density_reads_probs():
    v = VariableSpec("z", "categorical", levels=3, probs=(0.2, 0.3, 0.5))
    assert np.allclose(v.density(np.array([0.0, 1.0, 2.0]), {}), [0.2, 0.3, 0.5])


def test_dummy_var_gaussian_density_normalizes():
    d = DummyVar(family="gaussian", mean=0.5, variance=3.0)
    total, _ = integrate.quad(lambda x: float(d.density(x)), -40, 40)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_dummy_bernoulli_sampling_convention_matches_quantile():
    # success iff uniform exceeds 1 - p: the same draw stream must give the
    # same values through DummyVar.sample and through the manual rule
    d = DummyVar(family="bernoulli", p=0.3)
    rng1 = np.random.default_rng(5)
    rng2 = np.random.default_rng(5)
    got = d.sample(rng1, 1000)
    manual = (rng2.random(1000) > 0.7).astype(float)
    assert np.array_equal(got, manual)


# ---------------------------------------------------------------------------
# kernels and whole-model validation


def test_kernel_kinds_validated():
    assert KernelSpec().kind == "marginal"
    with pytest.raises(ModelError):
        KernelSpec(kind="mystery")
    with pytest.raises(ModelError):
        KernelSpec(kind="subgroup")  # needs x0


def test_validate_example_models_clean():
    for m in (examples.binary_or_model(), examples.copula_msm_model(),
              examples.vine_latent_model()):
        assert validate_model(m) == []


def test_validate_flags_forward_reference():
    m = examples.copula_msm_model()
    bad_past = list(m.past)
    # first declared variable referencing a later one
    bad_past[0] = VariableSpec(
        bad_past[0].name, bad_past[0].family, bad_past[0].link,
        LinearPredictor(terms=((("b",), 1.0),)), treatment=bad_past[0].treatment,
        variance=bad_past[0].variance,
    )
    bad = FrugalModel(past=tuple(bad_past), outcome=m.outcome,
                      kernel=m.kernel, dummy=m.dummy, dependence=m.dependence)
    assert any("before declaration" in d for d in validate_model(bad))


def test_validate_flags_outcome_margin_on_covariate():
    m = examples.copula_msm_model()
    out = VariableSpec("y", "gaussian", variance=1.0,
                       predictor=LinearPredictor(terms=((("l",), 1.0),)))
    bad = FrugalModel(past=m.past, outcome=out, kernel=m.kernel,
                      dummy=m.dummy, dependence=m.dependence)
    assert any("only on treatments" in d for d in validate_model(bad))


def test_validate_flags_missing_dummy():
    m = examples.copula_msm_model()
    bad = FrugalModel(past=m.past, outcome=m.outcome, kernel=m.kernel,
                      dummy=DummyTreatmentSpec(vars=()), dependence=m.dependence)
    assert any("dummy" in d for d in validate_model(bad))


# ---------------------------------------------------------------------------
# config parsing and serialization


def test_config_round_trip_is_byte_stable():
    for m in (examples.binary_or_model(), examples.copula_msm_model(),
              examples.vine_latent_model()):
        txt = serialize_model(m)
        m2 = parse_model_config(txt)
        assert serialize_model(m2) == txt


def test_config_round_trip_preserves_model():
    m = examples.copula_msm_model()
    m2 = parse_model_config(serialize_model(m))
    assert m2 == m


def test_config_requires_version_marker():
    with pytest.raises(ModelError):
        parse_model_config("past: []\noutcome: {name: y, family: bernoulli}\n")


def test_config_rejects_bad_yaml_and_non_mapping():
    with pytest.raises(ModelError):
        parse_model_config(":\n  - ][")
    with pytest.raises(ModelError):
        parse_model_config("- just\n- a\n- list\n")


def test_config_defaults_dummies_for_binary_treatments():
    txt = serialize_model(examples.binary_or_model())
    import yaml

    doc = yaml.safe_load(txt)
    doc.pop("dummy")
    m = parse_model_config(yaml.safe_dump(doc))
    d = m.dummy.get("a")
    assert d.family == "bernoulli" and d.p == pytest.approx(0.5)


@settings(max_examples=50, deadline=None)
@given(
    intercept=st.floats(-3, 3),
    ca=st.floats(-2, 2),
    cab=st.floats(-2, 2),
)
def test_predictor_config_round_trip(intercept, ca, cab):
    m = examples.copula_msm_model()
    out = VariableSpec(
        "y", "gaussian", variance=1.0,
        predictor=LinearPredictor(
            intercept=intercept, terms=((("a",), ca), (("a", "b"), cab))
        ),
    )
    m2 = FrugalModel(past=m.past, outcome=out, kernel=m.kernel,
                     dummy=m.dummy, dependence=m.dependence)
    back = parse_model_config(serialize_model(m2))
    assert back.outcome.predictor == out.predictor
