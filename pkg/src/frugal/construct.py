"""Assemble joint distributions from the three model pieces.

The interventional ("causal-world") joint factorizes as

    p*(z, x, y) = p*_X(x) * w(z | x) * p(y | z, x),

where p*_X is the dummy treatment marginal, w is the kernel-weighted
covariate law, and the outcome conditional p(y | z, x) is the causal
outcome margin times the conditional dependence factor.  The observational
joint shares the same outcome conditional and differs only in the (z, x)
margin, which is what makes the reweighting exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from frugal import dependence as dep_mod
from frugal.dependence import (
    CopulaSpec,
    OddsRatioSpec,
    ProbabilityTable,
    VineSpec,
    copula_density,
    dichotomized_prob,
    joint_cells,
    vine_density,
    vine_h_last,
)
from frugal.model import FrugalModel, ModelError


# ---------------------------------------------------------------------------
# gaussian closed form


@dataclass(frozen=True)
class GaussianFrugal:
    """Trivariate gaussian model in its three-piece parameterization.

    (tau2, upsilon2, rho) give the (Z, X) margin, beta and sigma2 the causal
    outcome margin Y | do(X=x) ~ N(beta*x, sigma2), and alpha the
    coefficient of Z in the regression of Y on (Z, X).  The pieces are
    variation dependent: sigma2 > alpha^2 * tau2 is required for a
    positive-definite joint.
    """

    tau2: float
    upsilon2: float
    rho: float
    beta: float
    sigma2: float
    alpha: float

    def __post_init__(self):
        if self.tau2 <= 0 or self.upsilon2 <= 0 or self.sigma2 <= 0:
            raise ModelError("variances must be positive")
        if not -1 < self.rho < 1:
            raise ModelError("rho must lie in (-1, 1)")
        if self.sigma2 <= self.alpha**2 * self.tau2:
            raise ModelError("requires sigma2 > alpha^2 * tau2")

    def conditional_outcome(self, z, x):
        """Mean and variance of Y | Z=z, X=x."""
        mean = self.beta * np.asarray(x, float) + self.alpha * np.asarray(z, float)
        return mean, self.sigma2 - self.alpha**2 * self.tau2

    def sample(self, n, seed=0):
        """Draw (z, x, y) by the sequential construction."""
        rng = np.random.default_rng(seed)
        tau, ups = np.sqrt(self.tau2), np.sqrt(self.upsilon2)
        z = rng.normal(0.0, tau, n)
        x = rng.normal(
            self.rho * ups / tau * z, ups * np.sqrt(1 - self.rho**2), n
        )
        mean, var = self.conditional_outcome(z, x)
        y = rng.normal(mean, np.sqrt(var), n)
        return z, x, y


def gaussian_joint(g: GaussianFrugal) -> np.ndarray:
    """Covariance matrix of (Z, X, Y) implied by the three pieces."""
    tau = np.sqrt(g.tau2)
    ups = np.sqrt(g.upsilon2)
    czx = g.rho * tau * ups
    cov = np.array(
        [
            [g.tau2, czx, g.alpha * g.tau2 + g.beta * czx],
            [czx, g.upsilon2, g.beta * g.upsilon2 + g.alpha * czx],
            [
                g.alpha * g.tau2 + g.beta * czx,
                g.beta * g.upsilon2 + g.alpha * czx,
                g.sigma2 + g.beta**2 * g.upsilon2 + 2 * czx * g.alpha * g.beta,
            ],
        ]
    )
    return cov


# ---------------------------------------------------------------------------
# outcome conditional p(y | z, x) from margin + dependence


def _paired_covariate(m: FrugalModel):
    dep = m.dependence
    target = getattr(dep, "with_", None)
    covs = m.covariates
    if target is None and len(covs) == 1:
        return covs[0]
    for v in covs:
        if v.name == target:
            return v
    raise ModelError("dependence pairing is ambiguous")


def _cov_quantile(v, row):
    """Quantile of a covariate value under its own conditional law."""
    return v.cdf(row[v.name], row)


def outcome_conditional(m: FrugalModel, row: dict):
    """Density/mass of Y given all of (z, x), i.e. margin times dependence.

    For a copula or vine this is the causal margin density multiplied by
    the conditional copula factor; for an odds-ratio spec it is the
    conditional probability implied by the 2x2 construction.  Invariant to
    reweighting of the (z, x) margin.
    """
    out = m.outcome
    dep = m.dependence
    y = np.asarray(row[out.name], dtype=float)

    if isinstance(dep, OddsRatioSpec):
        w = _paired_covariate(m)
        if out.family != "bernoulli" or w.family != "bernoulli":
            raise ModelError("odds-ratio dependence needs binary outcome and covariate")
        p_y = out._param(row)
        p_w = w._param(row)
        psi = dep.odds_ratio(row)
        c0, c1 = dep_mod.cond_prob_from_margin_and_or(p_y, p_w, psi)
        p1 = np.where(np.asarray(row[w.name], float) > 0.5, c1, c0)
        return np.where(y > 0.5, p1, 1.0 - p1)

    if isinstance(dep, CopulaSpec):
        w = _paired_covariate(m)
        theta = dep.param(row)
        u_w = _cov_quantile(w, row)
        if out.family == "bernoulli":
            if dep.family != "gaussian":
                raise ModelError("dichotomized outcome needs the gaussian family")
            p1 = dichotomized_prob(out._param(row), u_w, theta)
            return np.where(y > 0.5, p1, 1.0 - p1)
        u_y = out.cdf(y, row)
        return out.density(y, row) * copula_density(dep.family, u_y, u_w, theta)

    if isinstance(dep, VineSpec):
        fams, params = dep.tree_params(row)
        u_cols = []
        for name in dep.order[:-1]:
            u_cols.append(np.asarray(_cov_quantile(m.var(name), row), float))
        u_cond = np.column_stack([np.atleast_1d(c) for c in u_cols])
        fwd, _ = vine_h_last(fams, params, u_cond)
        if out.family == "bernoulli":
            p_y = np.asarray(out._param(row), float)
            # success iff the latent uniform exceeds 1 - p
            p1 = 1.0 - fwd(np.clip(1.0 - p_y, 1e-12, 1 - 1e-12) * np.ones(u_cond.shape[0]))
            return np.where(y > 0.5, p1, 1.0 - p1)
        u_y = np.atleast_1d(out.cdf(y, row))
        u_full = np.column_stack([u_cond, u_y])
        d = len(dep.order)
        fams_sub = [fams[t][: d - 2 - t] for t in range(d - 2)]
        par_sub = [params[t][: d - 2 - t] for t in range(d - 2)]
        ratio = vine_density(fams, params, u_full) / vine_density(
            fams_sub, par_sub, u_cond
        )
        return out.density(y, row) * ratio

    raise ModelError(f"unknown dependence {type(dep).__name__}")


# ---------------------------------------------------------------------------
# past densities and kernels


def past_obs_density(m: FrugalModel, row: dict):
    """Observational density of the full past: product of all conditionals."""
    out = 1.0
    for v in m.past:
        out = out * v.density(row[v.name], row)
    return out


def _discrete_levels(v):
    if v.family == "bernoulli":
        return [0.0, 1.0]
    if v.family == "categorical":
        return [float(k) for k in range(v.levels)]
    raise ModelError(f"{v.name}: not a finite-state variable")


def _enumerate_past(m: FrugalModel):
    names = [v.name for v in m.past]
    grids = [_discrete_levels(v) for v in m.past]
    for combo in itertools.product(*grids):
        yield dict(zip(names, combo))


def treatment_ratio(m: FrugalModel, row: dict):
    """p_ZX / p*_ZX under the marginal kernel: propensity over dummy, per treatment."""
    r = 1.0
    for t in m.treatments:
        r = r * t.density(row[t.name], row) / m.dummy.get(t.name).density(row[t.name])
    return r


def past_causal_density(m: FrugalModel, row: dict):
    """Density of the past in the causal world: p*_X(x) * w(z | x)."""
    kind = m.kernel.kind
    dummy = 1.0
    for t in m.treatments:
        dummy = dummy * m.dummy.get(t.name).density(row[t.name])
    if kind == "marginal":
        w = 1.0
        for v in m.covariates:
            w = w * v.density(row[v.name], row)
        return dummy * w
    # conditional / subgroup kernels need the covariate law given treatments,
    # obtained by exact Bayes over a finite past
    x_fix = (
        {t.name: row[t.name] for t in m.treatments}
        if kind == "conditional"
        else dict(m.kernel.x0)
    )
    num = 0.0
    den = 0.0
    z_names = [v.name for v in m.covariates]
    z_here = tuple(np.asarray(row[n], float) for n in z_names)
    for cell in _enumerate_past(m):
        match_x = all(
            np.isclose(cell[k], float(v)) for k, v in x_fix.items()
        )
        if not match_x:
            continue
        p = past_obs_density(m, cell)
        den += p
        if all(np.allclose(cell[n], z_here[i]) for i, n in enumerate(z_names)):
            num += p
    if den <= 0:
        raise ModelError("kernel conditioning event has probability zero")
    return dummy * num / den


def causal_density(m: FrugalModel, row: dict):
    """Density of the causal-world joint p*_{ZXY} at a row (0 off support)."""
    return past_causal_density(m, row) * outcome_conditional(m, row)


def observational_density(m: FrugalModel, row: dict):
    """Density of the observational joint p_{ZXY} at a row.

    Equals the causal density times the margin ratio p_ZX / p*_ZX, which
    depends on (z, x) only.
    """
    if m.kernel.kind == "marginal":
        ratio = treatment_ratio(m, row)
        star = past_causal_density(m, row)
        if np.any(np.asarray(star) <= 0) and np.any(
            np.asarray(past_obs_density(m, row)) > 0
        ):
            raise ModelError("absolute-continuity violation: p*_ZX = 0, p_ZX > 0")
        return causal_density(m, row) * ratio
    return past_obs_density(m, row) * outcome_conditional(m, row)


@dataclass
class JointDensity:
    """Joint density evaluator plus the metadata needed to normalize it."""

    evaluator: "object"
    domain: dict = field(default_factory=dict)

    def __call__(self, row: dict):
        return self.evaluator(row)


_CONT_RANGES = {"gaussian": (-15.0, 15.0), "exponential": (0.0, 60.0), "uniform": (0.0, 1.0)}


def joint_density(m: FrugalModel, world: str = "observational") -> JointDensity:
    """Package the causal or observational density with its domain."""
    domain = {}
    for v in list(m.past) + [m.outcome]:
        if v.family in ("bernoulli", "categorical"):
            domain[v.name] = ("discrete", _discrete_levels(v))
        else:
            domain[v.name] = ("continuous", _CONT_RANGES[v.family])
    fn = observational_density if world == "observational" else causal_density
    return JointDensity(evaluator=lambda row: fn(m, row), domain=domain)


# ---------------------------------------------------------------------------
# discrete closed form


@dataclass
class DiscreteJoint:
    """Exact observational joint over a finite state space."""

    full: ProbabilityTable  # axes: past names + outcome name
    cond_outcome: ProbabilityTable  # axes: treatments + outcome; P(y | x)


def discrete_joint(m: FrugalModel) -> DiscreteJoint:
    """Exact observational joint and treatment-conditional outcome table.

    Requires a finite past, a binary outcome, and an odds-ratio dependence
    paired with one binary covariate.  The construction solves each 2x2
    slice from (cognate outcome margin, causal covariate margin, odds
    ratio), then reweights the past to its observational law.
    """
    out = m.outcome
    if out.family != "bernoulli":
        raise ModelError("discrete_joint needs a binary outcome")
    if not isinstance(m.dependence, OddsRatioSpec):
        raise ModelError("discrete_joint needs an odds-ratio dependence")
    wvar = _paired_covariate(m)
    if wvar.family != "bernoulli":
        raise ModelError("paired covariate must be binary")
    if len(m.covariates) != 1:
        raise ModelError("discrete_joint supports exactly one covariate")

    names = [v.name for v in m.past] + [out.name]
    shape = tuple(len(_discrete_levels(v)) for v in m.past) + (2,)
    full = np.zeros(shape)
    treat_names = [t.name for t in m.treatments]

    # causal covariate margin given treatments: condition the causal past
    cells = list(_enumerate_past(m))
    p_causal = np.array([past_causal_density(m, c) for c in cells])
    for idx, cell in enumerate(cells):
        p_obs = past_obs_density(m, cell)
        if not 0 < p_obs:
            raise ModelError("zero cell in the past law")
        # p*_{W|X}(1|x): causal mass of W=1 among cells sharing this x
        sel = [
            j
            for j, c in enumerate(cells)
            if all(c[t] == cell[t] for t in treat_names)
        ]
        mass = sum(p_causal[j] for j in sel)
        mass_w1 = sum(p_causal[j] for j in sel if cells[j][wvar.name] > 0.5)
        p_w = mass_w1 / mass
        p_y = float(out._param(cell))
        if not (0 < p_w < 1 and 0 < p_y < 1):
            raise ModelError("degenerate margin in a 2x2 slice")
        psi = float(m.dependence.odds_ratio(cell))
        p11, p10, p01, p00 = joint_cells(p_y, p_w, psi)
        p_y1 = p11 / (p11 + p01) if cell[wvar.name] > 0.5 else p10 / (p10 + p00)
        pos = tuple(
            _discrete_levels(v).index(float(cell[v.name])) for v in m.past
        )
        full[pos + (1,)] = p_obs * p_y1
        full[pos + (0,)] = p_obs * (1.0 - p_y1)

    full_tab = ProbabilityTable(axes=tuple(names), probs=full)
    joint_xy = full_tab.margin(tuple(treat_names) + (out.name,))
    # normalize per treatment slice
    probs = joint_xy.probs
    cond = probs / probs.sum(axis=-1, keepdims=True)
    cond_tab = ProbabilityTable(axes=joint_xy.axes, probs=cond, conditional=True)
    return DiscreteJoint(full=full_tab, cond_outcome=cond_tab)


def frugal_pieces_from_joint(m: FrugalModel, joint: ProbabilityTable):
    """Re-extract (past law, cognate outcome margin, conditional OR) from a joint.

    Used to verify that construction and extraction are mutually inverse.
    Returns dicts keyed by past cells / treatment cells.
    """
    out = m.outcome
    wvar = _paired_covariate(m)
    treat_names = [t.name for t in m.treatments]
    past_m = joint.margin(tuple(v.name for v in m.past))
    cells = list(_enumerate_past(m))
    p_causal = np.array([past_causal_density(m, c) for c in cells])

    cognate, ors, past_law = {}, {}, {}
    for idx, cell in enumerate(cells):
        pos = tuple(_discrete_levels(v).index(float(cell[v.name])) for v in m.past)
        past_law[tuple(cell[v.name] for v in m.past)] = float(past_m.probs[pos])
    seen_x = {}
    for idx, cell in enumerate(cells):
        xkey = tuple(cell[t] for t in treat_names)
        if xkey in seen_x:
            continue
        seen_x[xkey] = True
        sel = [
            j for j, c in enumerate(cells) if all(c[t] == cell[t] for t in treat_names)
        ]
        mass = sum(p_causal[j] for j in sel)
        # p(y=1 | z, x) from the joint, then average over the causal past
        tot1 = 0.0
        cond = {}
        for j in sel:
            pos = tuple(
                _discrete_levels(v).index(float(cells[j][v.name])) for v in m.past
            )
            py1 = joint.probs[pos + (1,)] / joint.probs[pos].sum()
            cond[cells[j][wvar.name]] = py1
            tot1 += p_causal[j] / mass * py1
        cognate[xkey] = tot1
        c0, c1 = cond[0.0], cond[1.0]
        ors[xkey] = float(
            np.log(c1 / (1 - c1)) - np.log(c0 / (1 - c0))
        )  # conditional log OR of Y with W given X
    return past_law, cognate, ors
