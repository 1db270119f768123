"""Declarative model specifications: variables, predictors, kernels, dummies.

A full model is made of three separately parameterized pieces: the law of
the pre-outcome variables ("the past"), a causal outcome margin defined
against a weighting kernel, and a conditional dependence measure linking
the outcome to the covariates given the treatments.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

FAMILIES = ("bernoulli", "categorical", "gaussian", "exponential", "uniform")
LINKS = ("identity", "logit", "log")

# links valid for the parameter each family sets through its predictor
_FAMILY_LINKS = {
    "bernoulli": ("logit", "identity"),
    "categorical": ("identity",),
    "gaussian": ("identity",),
    "exponential": ("log", "identity"),
    "uniform": ("identity",),
}


class ModelError(ValueError):
    """Raised for invalid model specifications or config documents."""


def expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class LinearPredictor:
    """Affine function of previously declared variables.

    ``terms`` maps products of covariates to coefficients; an entry
    ``(("a", "b"), 0.5)`` contributes ``0.5 * a * b``.
    """

    intercept: float = 0.0
    terms: tuple[tuple[tuple[str, ...], float], ...] = ()

    def variables(self) -> tuple[str, ...]:
        seen: list[str] = []
        for names, _ in self.terms:
            for n in names:
                if n not in seen:
                    seen.append(n)
        return tuple(seen)

    def eval(self, row: dict) -> np.ndarray | float:
        """Evaluate on a mapping of variable name to scalar or array."""
        out = self.intercept
        for names, coef in self.terms:
            prod = coef
            for n in names:
                if n not in row:
                    raise ModelError(f"missing covariate {n!r} in row")
                prod = prod * np.asarray(row[n], dtype=float)
            out = out + prod
        return out


def linear_predictor_eval(lp: LinearPredictor, row: dict):
    """Evaluate ``intercept + sum(coef * prod(covariates))`` at a row."""
    return lp.eval(row)


@dataclass(frozen=True)
class VariableSpec:
    name: str
    family: str
    link: str = "identity"
    predictor: LinearPredictor = LinearPredictor()
    treatment: bool = False
    variance: float | None = None  # gaussian only
    levels: int | None = None  # categorical only
    probs: tuple[float, ...] | None = None  # categorical only

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown family {self.family!r}")
        if self.link not in LINKS:
            raise ModelError(f"unknown link {self.link!r}")
        if self.link not in _FAMILY_LINKS[self.family]:
            raise ModelError(
                f"link {self.link!r} incompatible with family {self.family!r}"
            )
        if self.family == "gaussian" and (self.variance is None or self.variance <= 0):
            raise ModelError(f"{self.name}: gaussian family needs variance > 0")
        if self.family == "categorical":
            if not self.levels or self.levels < 2:
                raise ModelError(f"{self.name}: categorical needs levels >= 2")
            if self.probs is None or len(self.probs) != self.levels:
                raise ModelError(f"{self.name}: categorical needs {self.levels} probs")

    # --- family numerics -------------------------------------------------

    def _param(self, row: dict):
        """Natural parameter (mean/probability) at a row."""
        eta = self.predictor.eval(row)
        if self.link == "logit":
            return expit(eta)
        if self.link == "log":
            return np.exp(eta)
        return eta

    def density(self, value, row: dict):
        value = np.asarray(value, dtype=float)
        if self.family == "bernoulli":
            p = self._param(row)
            return np.where(value > 0.5, p, 1.0 - p)
        if self.family == "gaussian":
            mu = self._param(row)
            v = self.variance
            return np.exp(-0.5 * (value - mu) ** 2 / v) / np.sqrt(2 * np.pi * v)
        if self.family == "exponential":
            mean = self._param(row)
            return np.where(value >= 0, np.exp(-value / mean) / mean, 0.0)
        if self.family == "uniform":
            return np.where((value >= 0) & (value <= 1), 1.0, 0.0)
        if self.family == "categorical":
            probs = np.asarray(self.probs)
            return probs[value.astype(int)]
        raise ModelError(self.family)

    def cdf(self, value, row: dict):
        value = np.asarray(value, dtype=float)
        if self.family == "gaussian":
            from scipy.stats import norm

            return norm.cdf(value, loc=self._param(row), scale=np.sqrt(self.variance))
        if self.family == "exponential":
            mean = self._param(row)
            return -np.expm1(-np.maximum(value, 0.0) / mean)
        if self.family == "uniform":
            return np.clip(value, 0.0, 1.0)
        raise ModelError(f"cdf undefined for family {self.family!r}")

    def quantile(self, u, row: dict):
        u = np.asarray(u, dtype=float)
        if self.family == "gaussian":
            from scipy.stats import norm

            return norm.ppf(u, loc=self._param(row), scale=np.sqrt(self.variance))
        if self.family == "exponential":
            return -self._param(row) * np.log1p(-u)
        if self.family == "uniform":
            return u
        raise ModelError(f"quantile undefined for family {self.family!r}")

    def sample(self, rng: np.random.Generator, row: dict, n: int):
        if self.family == "bernoulli":
            return (rng.random(n) > 1.0 - self._param(row)).astype(float)
        if self.family == "categorical":
            return rng.choice(self.levels, size=n, p=np.asarray(self.probs)).astype(
                float
            )
        return self.quantile(rng.random(n), row)


@dataclass(frozen=True)
class KernelSpec:
    """Weight kernel defining which covariate law the outcome margin averages.

    ``marginal`` keeps each covariate's declared conditional but integrates
    over randomized treatments (the interventional margin); ``conditional``
    uses the ordinary conditional law; ``subgroup`` conditions covariates on
    a fixed treatment assignment ``x0``.
    """

    kind: str = "marginal"
    x0: dict | None = None

    def __post_init__(self):
        if self.kind not in ("marginal", "conditional", "subgroup"):
            raise ModelError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "subgroup" and not self.x0:
            raise ModelError("subgroup kernel requires x0")


@dataclass(frozen=True)
class DummyVar:
    family: str
    p: float | None = None
    mean: float = 0.0
    variance: float = 1.0

    def density(self, value):
        value = np.asarray(value, dtype=float)
        if self.family == "bernoulli":
            return np.where(value > 0.5, self.p, 1.0 - self.p)
        if self.family == "gaussian":
            v = self.variance
            return np.exp(-0.5 * (value - self.mean) ** 2 / v) / np.sqrt(
                2 * np.pi * v
            )
        raise ModelError(f"dummy family {self.family!r} unsupported")

    def sample(self, rng, n):
        # success iff the uniform exceeds 1 - p, the same convention as the
        # quantile-based samplers, so identical streams give identical draws
        if self.family == "bernoulli":
            return (rng.random(n) > 1.0 - self.p).astype(float)
        from scipy.stats import norm

        return norm.ppf(rng.random(n), loc=self.mean, scale=np.sqrt(self.variance))

    def grid(self, m=33):
        if self.family == "bernoulli":
            return np.array([0.0, 1.0])
        from scipy.stats import norm

        qs = np.linspace(1e-6, 1 - 1e-6, m)
        return norm.ppf(qs, loc=self.mean, scale=np.sqrt(self.variance))


@dataclass(frozen=True)
class DummyTreatmentSpec:
    """Non-degenerate treatment marginals used in the interventional world."""

    vars: tuple[tuple[str, DummyVar], ...] = ()

    def get(self, name: str) -> DummyVar:
        for n, d in self.vars:
            if n == name:
                return d
        raise ModelError(f"no dummy distribution for treatment {name!r}")


@dataclass(frozen=True)
class FrugalModel:
    """Three-piece model: past, causal outcome margin, conditional dependence."""

    past: tuple[VariableSpec, ...]
    outcome: VariableSpec
    kernel: KernelSpec
    dummy: DummyTreatmentSpec
    dependence: "object"  # DependenceSpec from frugal.dependence

    @property
    def treatments(self) -> tuple[VariableSpec, ...]:
        return tuple(v for v in self.past if v.treatment)

    @property
    def covariates(self) -> tuple[VariableSpec, ...]:
        return tuple(v for v in self.past if not v.treatment)

    def var(self, name: str) -> VariableSpec:
        for v in self.past:
            if v.name == name:
                return v
        if self.outcome.name == name:
            return self.outcome
        raise ModelError(f"unknown variable {name!r}")


# ---------------------------------------------------------------------------
# validation


def validate_model(m: FrugalModel) -> list[str]:
    """Return a list of diagnostics; empty iff the model is well formed."""
    from frugal.dependence import CopulaSpec, OddsRatioSpec, VineSpec

    diags: list[str] = []
    seen: list[str] = []
    for v in m.past:
        for ref in v.predictor.variables():
            if ref not in seen:
                diags.append(f"{v.name}: predictor references {ref!r} before declaration")
        if v.name in seen:
            diags.append(f"duplicate variable {v.name!r}")
        seen.append(v.name)
    for ref in m.outcome.predictor.variables():
        if ref not in seen:
            diags.append(f"outcome predictor references undeclared {ref!r}")
        if not m.var(ref).treatment if ref in seen else False:
            diags.append(
                f"outcome margin may depend only on treatments, not {ref!r}"
            )
    treatment_names = [v.name for v in m.treatments]
    if m.kernel.kind == "subgroup":
        for name, val in (m.kernel.x0 or {}).items():
            if name not in treatment_names:
                diags.append(f"subgroup kernel fixes non-treatment {name!r}")
            else:
                tv = m.var(name)
                if tv.family == "bernoulli" and val not in (0, 1):
                    diags.append(f"subgroup value {val!r} outside support of {name!r}")
    for t in m.treatments:
        try:
            m.dummy.get(t.name)
        except ModelError:
            diags.append(f"missing dummy distribution for treatment {t.name!r}")

    dep = m.dependence
    outname = m.outcome.name
    covnames = [v.name for v in m.covariates]
    if isinstance(dep, (CopulaSpec, OddsRatioSpec)):
        pred = dep.param_predictor if isinstance(dep, CopulaSpec) else dep.log_or_predictor
        for ref in pred.variables():
            if ref == outname:
                diags.append("dependence may not depend on outcome")
            elif ref not in treatment_names:
                diags.append(f"dependence parameter references non-treatment {ref!r}")
        target = dep.with_ or (covnames[0] if len(covnames) == 1 else None)
        if target is None:
            diags.append("dependence needs 'with' when several covariates exist")
        elif target not in covnames:
            diags.append(f"dependence pairs outcome with unknown covariate {target!r}")
    elif isinstance(dep, VineSpec):
        if dep.order[-1] != outname:
            diags.append("vine order must end with the outcome")
        for name in dep.order[:-1]:
            if name not in covnames:
                diags.append(f"vine includes unknown covariate {name!r}")
        for pr in dep.pairs:
            for ref in pr.param_predictor.variables():
                if ref == outname:
                    diags.append("dependence may not depend on outcome")
                elif ref not in treatment_names:
                    diags.append(
                        f"vine parameter references non-treatment {ref!r}"
                    )
        exp_edges = len(dep.order) * (len(dep.order) - 1) // 2
        if len(dep.pairs) != exp_edges:
            diags.append(
                f"vine on {len(dep.order)} variables needs {exp_edges} pairs"
            )
    else:
        diags.append(f"unknown dependence spec {type(dep).__name__}")
    return diags


# ---------------------------------------------------------------------------
# config parsing / serialization

CONFIG_VERSION = 1


def _predictor_from_cfg(d: dict) -> LinearPredictor:
    d = dict(d or {})
    intercept = float(d.pop("intercept", 0.0))
    terms = []
    for key, coef in d.items():
        names = tuple(s.strip() for s in str(key).split(":"))
        if any(not n for n in names):
            raise ModelError(f"bad term name {key!r}")
        terms.append((names, float(coef)))
    return LinearPredictor(intercept=intercept, terms=tuple(terms))


def _predictor_to_cfg(lp: LinearPredictor) -> dict:
    out = {"intercept": float(lp.intercept)}
    for names, coef in lp.terms:
        out[":".join(names)] = float(coef)
    return out


def _var_from_cfg(d: dict, treatment_default=False) -> VariableSpec:
    if "name" not in d or "family" not in d:
        raise ModelError(f"variable entry needs 'name' and 'family': {d!r}")
    fam = d["family"]
    link = d.get("link", _FAMILY_LINKS.get(fam, ("identity",))[0])
    return VariableSpec(
        name=d["name"],
        family=fam,
        link=link,
        predictor=_predictor_from_cfg(d.get("formula", {})),
        treatment=bool(d.get("treatment", treatment_default)),
        variance=d.get("variance"),
        levels=d.get("levels"),
        probs=tuple(d["probs"]) if "probs" in d else None,
    )


def _var_to_cfg(v: VariableSpec) -> dict:
    out = {"name": v.name, "family": v.family, "link": v.link}
    if v.treatment:
        out["treatment"] = True
    out["formula"] = _predictor_to_cfg(v.predictor)
    if v.variance is not None:
        out["variance"] = float(v.variance)
    if v.levels is not None:
        out["levels"] = int(v.levels)
        out["probs"] = [float(p) for p in v.probs]
    return out


def _dep_from_cfg(d: dict):
    from frugal.dependence import CopulaSpec, OddsRatioSpec, PairSpec, VineSpec

    kind = d.get("type")
    if kind == "copula":
        return CopulaSpec(
            family=d["family"],
            param_predictor=_predictor_from_cfg(d.get("formula", {})),
            with_=d.get("with"),
            adapters=tuple(sorted((d.get("adapters") or {}).items())),
        )
    if kind == "odds_ratio":
        return OddsRatioSpec(
            log_or_predictor=_predictor_from_cfg(d.get("formula", {})),
            with_=d.get("with"),
        )
    if kind == "vine":
        pairs = tuple(
            PairSpec(
                pair=tuple(p["vars"]),
                conditioned=tuple(p.get("given", ())),
                family=p.get("family", "gaussian"),
                param_predictor=_predictor_from_cfg(p.get("formula", {})),
            )
            for p in d.get("pairs", [])
        )
        return VineSpec(order=tuple(d["order"]), pairs=pairs)
    raise ModelError(f"unknown dependence type {kind!r}")


def _dep_to_cfg(dep) -> dict:
    from frugal.dependence import CopulaSpec, OddsRatioSpec, VineSpec

    if isinstance(dep, CopulaSpec):
        out = {
            "type": "copula",
            "family": dep.family,
            "formula": _predictor_to_cfg(dep.param_predictor),
        }
        if dep.with_:
            out["with"] = dep.with_
        if dep.adapters:
            out["adapters"] = {k: v for k, v in dep.adapters}
        return out
    if isinstance(dep, OddsRatioSpec):
        out = {"type": "odds_ratio", "formula": _predictor_to_cfg(dep.log_or_predictor)}
        if dep.with_:
            out["with"] = dep.with_
        return out
    if isinstance(dep, VineSpec):
        return {
            "type": "vine",
            "order": list(dep.order),
            "pairs": [
                {
                    "vars": list(p.pair),
                    "given": list(p.conditioned),
                    "family": p.family,
                    "formula": _predictor_to_cfg(p.param_predictor),
                }
                for p in dep.pairs
            ],
        }
    raise ModelError(type(dep).__name__)


def _dummy_from_cfg(d: dict) -> DummyTreatmentSpec:
    vars_ = []
    for name, spec in (d or {}).items():
        fam = spec.get("family", "bernoulli")
        vars_.append(
            (
                name,
                DummyVar(
                    family=fam,
                    p=spec.get("p"),
                    mean=float(spec.get("mean", 0.0)),
                    variance=float(spec.get("variance", 1.0)),
                ),
            )
        )
    return DummyTreatmentSpec(vars=tuple(vars_))


def _dummy_to_cfg(spec: DummyTreatmentSpec) -> dict:
    out = {}
    for name, d in spec.vars:
        if d.family == "bernoulli":
            out[name] = {"family": "bernoulli", "p": float(d.p)}
        else:
            out[name] = {
                "family": d.family,
                "mean": float(d.mean),
                "variance": float(d.variance),
            }
    return out


def parse_model_config(text: str) -> FrugalModel:
    """Parse a YAML model document into a validated :class:`FrugalModel`."""
    try:
        doc = yaml.safe_load(io.StringIO(text))
    except yaml.YAMLError as e:
        raise ModelError(f"config syntax error: {e}") from e
    if not isinstance(doc, dict):
        raise ModelError("config must be a mapping")
    if doc.get("frugal_spec") != CONFIG_VERSION:
        raise ModelError(f"config must declare frugal_spec = {CONFIG_VERSION}")
    past = tuple(_var_from_cfg(d) for d in doc.get("past") or ())
    outcome = _var_from_cfg(doc["outcome"])
    kernel_cfg = doc.get("kernel") or {}
    kernel = KernelSpec(kind=kernel_cfg.get("kind", "marginal"), x0=kernel_cfg.get("x0"))
    dummy = _dummy_from_cfg(doc.get("dummy") or {})
    if not dummy.vars:
        # default: independent symmetric Bernoulli dummies for binary treatments
        vars_ = []
        for v in past:
            if v.treatment:
                if v.family == "bernoulli":
                    vars_.append((v.name, DummyVar(family="bernoulli", p=0.5)))
                else:
                    vars_.append((v.name, DummyVar(family="gaussian", variance=2.0)))
        dummy = DummyTreatmentSpec(vars=tuple(vars_))
    dep = _dep_from_cfg(doc.get("dependence") or {})
    m = FrugalModel(past=past, outcome=outcome, kernel=kernel, dummy=dummy, dependence=dep)
    diags = validate_model(m)
    if diags:
        raise ModelError("invalid model: " + "; ".join(diags))
    return m


def serialize_model(m: FrugalModel) -> str:
    """Serialize to the config grammar; byte-stable for identical models."""
    doc = {
        "frugal_spec": CONFIG_VERSION,
        "past": [_var_to_cfg(v) for v in m.past],
        "outcome": _var_to_cfg(m.outcome),
        "kernel": (
            {"kind": m.kernel.kind, "x0": m.kernel.x0}
            if m.kernel.x0
            else {"kind": m.kernel.kind}
        ),
        "dummy": _dummy_to_cfg(m.dummy),
        "dependence": _dep_to_cfg(m.dependence),
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False)
