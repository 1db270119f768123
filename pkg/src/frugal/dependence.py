"""Conditional dependence measures: copulas, odds ratios, and vines.

These objects carry the third piece of a model: how the outcome relates to
the covariates once the treatments are held fixed.  All of them are
invariant to reweighting of the covariate-treatment margin, which is what
lets the same numbers describe both the interventional and the
observational worlds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from frugal.model import LinearPredictor, ModelError, expit

COPULA_FAMILIES = ("gaussian", "clayton", "frank")

_EPS = 1e-12


def _clip01(u):
    return np.clip(np.asarray(u, dtype=float), _EPS, 1.0 - _EPS)


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class CopulaSpec:
    """Bivariate copula between the outcome and one covariate, given treatment.

    The copula parameter varies with treatment through ``param_predictor``
    on an unconstrained scale: ``rho = 2*expit(eta) - 1`` (gaussian),
    ``theta = exp(eta)`` (clayton), ``theta = eta`` (frank).
    """

    family: str
    param_predictor: LinearPredictor = LinearPredictor()
    with_: str | None = None
    adapters: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.family not in COPULA_FAMILIES:
            raise ModelError(f"unknown copula family {self.family!r}")

    def param(self, row: dict):
        return link_param(self.family, self.param_predictor.eval(row))


@dataclass(frozen=True)
class OddsRatioSpec:
    """Conditional odds ratio between a binary outcome and binary covariate."""

    log_or_predictor: LinearPredictor = LinearPredictor()
    with_: str | None = None

    def odds_ratio(self, row: dict):
        return np.exp(self.log_or_predictor.eval(row))


@dataclass(frozen=True)
class PairSpec:
    """One edge of a vine: a pair copula with its conditioning set."""

    pair: tuple[str, str]
    conditioned: tuple[str, ...] = ()
    family: str = "gaussian"
    param_predictor: LinearPredictor = LinearPredictor()

    def param(self, row: dict):
        return link_param(self.family, self.param_predictor.eval(row))


@dataclass(frozen=True)
class VineSpec:
    """D-vine over several covariates and the outcome (listed last)."""

    order: tuple[str, ...]
    pairs: tuple[PairSpec, ...]

    def tree_params(self, row: dict):
        """Parameters arranged by tree: ``params[t][i]`` joins order[i], order[i+t+1]."""
        d = len(self.order)
        lookup = {}
        for p in self.pairs:
            lookup[frozenset(p.pair)] = p
        out = []
        fams = []
        for t in range(d - 1):
            lvl, flvl = [], []
            for i in range(d - 1 - t):
                a, b = self.order[i], self.order[i + t + 1]
                p = lookup.get(frozenset((a, b)))
                if p is None:
                    raise ModelError(f"vine missing pair ({a},{b})")
                lvl.append(p.param(row))
                flvl.append(p.family)
            out.append(lvl)
            fams.append(flvl)
        return fams, out


def link_param(family: str, eta):
    eta = np.asarray(eta, dtype=float)
    if family == "gaussian":
        return 2.0 * expit(eta) - 1.0
    if family == "clayton":
        return np.exp(eta)
    if family == "frank":
        return eta
    raise ModelError(f"unknown copula family {family!r}")


# ---------------------------------------------------------------------------
# bivariate copula numerics (densities, h-functions, inverse h-functions)


def gaussian_copula_density(u, v, rho):
    """Density of the bivariate gaussian copula at (u, v)."""
    u, v = _clip01(u), _clip01(v)
    rho = np.asarray(rho, dtype=float)
    x, y = stats.norm.ppf(u), stats.norm.ppf(v)
    om = 1.0 - rho**2
    return np.exp(
        -(rho**2 * (x**2 + y**2) - 2 * rho * x * y) / (2 * om)
    ) / np.sqrt(om)


def copula_density(family, u, v, theta):
    u, v = _clip01(u), _clip01(v)
    theta = np.asarray(theta, dtype=float)
    if family == "gaussian":
        return gaussian_copula_density(u, v, theta)
    if family == "clayton":
        t = u ** (-theta) + v ** (-theta) - 1.0
        return (
            (1.0 + theta)
            * (u * v) ** (-theta - 1.0)
            * t ** (-(2.0 * theta + 1.0) / theta)
        )
    if family == "frank":
        theta = np.where(np.abs(theta) < 1e-8, 1e-8, theta)
        num = -theta * np.expm1(-theta) * np.exp(-theta * (u + v))
        den = (
            np.expm1(-theta)
            + np.expm1(-theta * u) * np.expm1(-theta * v)
        ) ** 2
        return num / den
    raise ModelError(family)


def copula_h(family, u, v, theta):
    """h-function: conditional cdf C(u | v) of the first argument given the second."""
    u, v = _clip01(u), _clip01(v)
    theta = np.asarray(theta, dtype=float)
    if family == "gaussian":
        x, y = stats.norm.ppf(u), stats.norm.ppf(v)
        return stats.norm.cdf((x - theta * y) / np.sqrt(1.0 - theta**2))
    if family == "clayton":
        return v ** (-theta - 1.0) * (
            u ** (-theta) + v ** (-theta) - 1.0
        ) ** (-(theta + 1.0) / theta)
    if family == "frank":
        theta = np.where(np.abs(theta) < 1e-8, 1e-8, theta)
        ev = np.exp(-theta * v)
        num = ev * np.expm1(-theta * u)
        den = np.expm1(-theta) + np.expm1(-theta * u) * np.expm1(-theta * v)
        return num / den
    raise ModelError(family)


def copula_h_inv(family, w, v, theta):
    """Inverse of :func:`copula_h` in its first argument: u with C(u|v) = w."""
    w, v = _clip01(w), _clip01(v)
    theta = np.asarray(theta, dtype=float)
    if family == "gaussian":
        return stats.norm.cdf(
            stats.norm.ppf(w) * np.sqrt(1.0 - theta**2) + theta * stats.norm.ppf(v)
        )
    if family == "clayton":
        return (
            (w * v ** (theta + 1.0)) ** (-theta / (theta + 1.0))
            + 1.0
            - v ** (-theta)
        ) ** (-1.0 / theta)
    if family == "frank":
        theta = np.where(np.abs(theta) < 1e-8, 1e-8, theta)
        ev = np.exp(-theta * v)
        return -np.log1p(w * np.expm1(-theta) / (ev + w * (1.0 - ev))) / theta
    raise ModelError(family)


def copula_pair_conditional(family, theta, u, w):
    """Second margin v given first margin u, driven by fresh uniforms w.

    Inverse conditional cdf, so (u, v) carries the requested copula when u
    is uniform and w is independent uniform.
    """
    return copula_h_inv(family, np.asarray(w, float), np.asarray(u, float), theta)


def copula_sample_pair(spec: CopulaSpec, x: dict | None = None, n: int = 1, seed=0):
    """Draw n quantile pairs from the copula at treatment values x."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    theta = spec.param(x or {})
    u = rng.random(n)
    v = copula_pair_conditional(spec.family, theta, u, rng.random(n))
    return np.column_stack([u, v])


# ---------------------------------------------------------------------------
# D-vine sampling and density


def _backward_chain(fams, params, u):
    """Conditional cdf chain for the margins already in hand.

    Given uniforms ``u`` (n, m) for the first m vine margins, returns
    ``chain[t] = F(x_{m-1-t} | x_{m-t}, ..., x_{m-1})`` for t = 0..m-1 —
    exactly the conditioning values the next margin's pair copulas need,
    tree by tree.
    """
    u = np.atleast_2d(_clip01(u))
    m = u.shape[1]
    fwd = [u[:, i] for i in range(m)]  # F(x_{i+t} | x_i..x_{i+t-1})
    bwd = [u[:, i] for i in range(m)]  # F(x_i | x_{i+1}..x_{i+t})
    chain = [u[:, -1]]
    for t in range(m - 1):
        new_fwd, new_bwd = [], []
        for i in range(m - 1 - t):
            fam, th = fams[t][i], params[t][i]
            a, b = bwd[i], fwd[i + 1]
            new_bwd.append(copula_h(fam, a, b, th))
            new_fwd.append(copula_h(fam, b, a, th))
        fwd, bwd = new_fwd, new_bwd
        chain.append(bwd[-1])
    return chain


def vine_sample(spec: VineSpec, x: dict | None = None, n: int = 1, seed=0):
    """Draw n quantile vectors from the D-vine at treatment values x."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    fams, params = spec.tree_params(x or {})
    w = rng.random((n, len(spec.order)))
    return vine_sample_arrays(fams, params, w)


def vine_sample_arrays(fams, params, w):
    """Transform iid uniforms ``w`` (n, d) into D-vine dependent uniforms.

    ``fams[t][i]`` / ``params[t][i]`` give the pair copula joining margins
    i and i+t+1 in tree t.  Sequential inverse-Rosenblatt: each new margin
    is drawn by inverting its conditional cdf given the margins so far.
    """
    w = np.atleast_2d(np.asarray(w, dtype=float))
    n, d = w.shape
    u = np.empty_like(w)
    u[:, 0] = w[:, 0]
    for i in range(1, d):
        chain = _backward_chain(fams, params, u[:, :i])
        t_ = _clip01(w[:, i])
        # F(x_i | x_0..x_{i-1}) stacks h over pairs (i-1-t, i), tree t
        for t in range(i - 1, -1, -1):
            fam, th = fams[t][i - t - 1], params[t][i - t - 1]
            t_ = copula_h_inv(fam, t_, chain[t], th)
        u[:, i] = t_
    return u


def vine_density(fams, params, u):
    """Density of the D-vine copula at uniform points ``u`` (n, d)."""
    u = np.atleast_2d(_clip01(u))
    n, d = u.shape
    dens = np.ones(n)
    # F[i][j]: conditional cdfs maintained tree by tree
    fwd = [u[:, i] for i in range(d)]  # F(x_{i+t} | x_{i+1..i+t-1}) forward
    bwd = [u[:, i] for i in range(d)]  # F(x_i | x_{i+1..i+t-1}) backward
    for t in range(d - 1):
        new_fwd, new_bwd = [], []
        for i in range(d - 1 - t):
            fam, th = fams[t][i], params[t][i]
            a, b = bwd[i], fwd[i + 1]
            dens = dens * copula_density(fam, a, b, th)
            new_bwd.append(copula_h(fam, a, b, th))
            new_fwd.append(copula_h(fam, b, a, th))
        fwd, bwd = new_fwd, new_bwd
    return dens


def vine_h_last(fams, params, u_cond):
    """Conditional cdf transform of the last margin given all earlier ones.

    Returns a function mapping uniforms w to u_last with the vine's
    conditional law given ``u_cond`` (n, d-1), plus the forward evaluation
    (u_last -> conditional cdf).  Used for conditional sampling of the
    outcome and for likelihoods with a discrete outcome.
    """
    u_cond = np.atleast_2d(_clip01(u_cond))
    n, dm1 = u_cond.shape
    d = dm1 + 1
    chain = _backward_chain(fams, params, u_cond)

    def forward(u_last):
        t_ = _clip01(u_last)
        for t in range(dm1):
            fam = fams[t][d - t - 2]
            th = params[t][d - t - 2]
            t_ = copula_h(fam, t_, chain[t], th)
        return t_

    def inverse(w):
        t_ = _clip01(w)
        for t in range(dm1 - 1, -1, -1):
            fam = fams[t][d - t - 2]
            th = params[t][d - t - 2]
            t_ = copula_h_inv(fam, t_, chain[t], th)
        return t_

    return forward, inverse


# ---------------------------------------------------------------------------
# discrete tools: odds ratios, 2x2 solve, IPF, probability tables


def joint_cells(p_y, p_z, psi):
    """Cells (p11, p10, p01, p00) of the 2x2 joint with margins and OR psi.

    Vectorized hot-path solver: the quadratic root for p11 in the
    numerically stable form ``2c / (b + sqrt(b^2 - 4qc))``, exact at psi = 1.
    """
    p_y = np.asarray(p_y, dtype=float)
    p_z = np.asarray(p_z, dtype=float)
    psi = np.asarray(psi, dtype=float)
    q = psi - 1.0
    b = 1.0 + (p_y + p_z) * q
    c = psi * p_y * p_z
    disc = b**2 - 4.0 * q * c
    p11 = np.where(
        np.abs(q) < 1e-10, p_y * p_z, 2.0 * c / (b + np.sqrt(np.maximum(disc, 0.0)))
    )
    p10 = p_y - p11
    p01 = p_z - p11
    p00 = 1.0 - p11 - p10 - p01
    return p11, p10, p01, p00


def cond_prob_from_margin_and_or(p_y, p_z, psi):
    """P(Y=1 | Z=z) for z in {0,1} under the 2x2 joint with the given OR."""
    p11, p10, p01, p00 = joint_cells(p_y, p_z, psi)
    return p10 / (p10 + p00), p11 / (p11 + p01)


def _as_2x2(table):
    p = table.probs if isinstance(table, ProbabilityTable) else np.asarray(table, float)
    if p.shape != (2, 2):
        raise ModelError("expected a 2x2 table")
    return p


def or_2x2(table):
    """Log odds ratio log[(p11*p00)/(p10*p01)] of a 2x2 joint."""
    p = _as_2x2(table)
    if np.any(p <= 0):
        raise ModelError("odds ratio undefined with zero cells")
    return float(np.log(p[1, 1] * p[0, 0]) - np.log(p[1, 0] * p[0, 1]))


def joint_from_margins_and_or(p_y, p_z, log_psi):
    """2x2 joint (axes y, z) with margins (p_y, p_z) and log odds ratio."""
    if not (0 < p_y < 1 and 0 < p_z < 1):
        raise ModelError("margins must lie strictly in (0,1)")
    p11, p10, p01, p00 = joint_cells(p_y, p_z, np.exp(log_psi))
    return ProbabilityTable(
        axes=("y", "z"), probs=np.array([[p00, p01], [p10, p11]], dtype=float)
    )


@dataclass
class ProbabilityTable:
    """Dense probability table over named discrete axes.

    A joint table sums to 1 overall; a ``conditional`` table sums to 1
    along its last axis for every slice of the earlier axes.
    """

    axes: tuple[str, ...]
    probs: np.ndarray
    conditional: bool = False

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != len(self.axes):
            raise ModelError("axes/probs rank mismatch")
        if np.any(self.probs < -1e-12):
            raise ModelError("negative cell probability")
        if self.conditional:
            if not np.allclose(self.probs.sum(axis=-1), 1.0, atol=1e-8):
                raise ModelError("conditional slices must each sum to 1")
        elif not np.isclose(self.probs.sum(), 1.0, atol=1e-8):
            raise ModelError("cell probabilities must sum to 1")

    def margin(self, names):
        names = tuple(names)
        keep = tuple(self.axes.index(n) for n in names)
        drop = tuple(i for i in range(len(self.axes)) if i not in keep)
        p = self.probs.sum(axis=drop) if drop else self.probs
        # reorder to requested
        perm = np.argsort(np.argsort(keep))
        return ProbabilityTable(axes=names, probs=np.transpose(p, perm))

    def condition(self, **values):
        idx = [slice(None)] * len(self.axes)
        axes = []
        for i, a in enumerate(self.axes):
            if a in values:
                idx[i] = int(values[a])
            else:
                axes.append(a)
        p = self.probs[tuple(idx)]
        return ProbabilityTable(axes=tuple(axes), probs=p / p.sum())


def ipf_fit(target_margins, or_structure, tol=1e-10, max_iter=10000):
    """Iterative proportional fitting of a 2-way table to fresh margins.

    ``or_structure`` seeds the iteration and fixes the (local) odds-ratio
    structure, which margin rescaling cannot change; each sweep is monotone
    non-increasing in KL divergence to the feasible set.
    """
    r_tab, c_tab = target_margins
    r = np.asarray(
        r_tab.probs if isinstance(r_tab, ProbabilityTable) else r_tab, dtype=float
    )
    c = np.asarray(
        c_tab.probs if isinstance(c_tab, ProbabilityTable) else c_tab, dtype=float
    )
    seed = (
        or_structure.probs
        if isinstance(or_structure, ProbabilityTable)
        else np.asarray(or_structure, dtype=float)
    )
    if np.any(r <= 0) or np.any(c <= 0) or np.any(seed <= 0):
        raise ModelError("ipf_fit needs strictly positive margins and seed")
    p = seed.astype(float).copy()
    p /= p.sum()
    if p.shape != (r.size, c.size):
        raise ModelError("seed table shape does not match margins")
    for _ in range(max_iter):
        p *= (r / p.sum(axis=1))[:, None]
        p *= c / p.sum(axis=0)
        resid = max(
            np.max(np.abs(p.sum(axis=1) - r)), np.max(np.abs(p.sum(axis=0) - c))
        )
        if resid < tol:
            axes = (
                getattr(r_tab, "axes", ("row",))[0] if hasattr(r_tab, "axes") else "row",
                getattr(c_tab, "axes", ("col",))[0] if hasattr(c_tab, "axes") else "col",
            )
            return ProbabilityTable(axes=axes, probs=p / p.sum())
    raise ModelError(f"ipf_fit did not converge; margin residual {resid:.3e}")


# ---------------------------------------------------------------------------
# dichotomized latent-gaussian link for binary outcomes in copulas/vines


def dichotomized_prob(p, u, rho):
    """P(binary = 1 | continuous at quantile u) under a latent-gaussian link.

    The binary margin dichotomizes a latent uniform sharing a gaussian
    copula (correlation ``rho``) with the continuous margin: success iff the
    latent uniform exceeds 1 - p, so the result is increasing in both p and
    (for rho > 0) u, and averages back to p over u.
    """
    p = _clip01(p)
    u = _clip01(u)
    rho = np.asarray(rho, dtype=float)
    zc = stats.norm.ppf(1.0 - p)  # latent cut: success above it
    zu = stats.norm.ppf(u)
    return stats.norm.sf((zc - rho * zu) / np.sqrt(1.0 - rho**2))


def dichotomized_copula_prob(spec: CopulaSpec, continuous_quantile, binary_prob, x=None):
    """Conditional success probability of a dichotomized binary margin."""
    if spec.family != "gaussian":
        raise ModelError(
            "dichotomized margins are supported for the gaussian family only"
        )
    rho = spec.param(x or {})
    return dichotomized_prob(binary_prob, continuous_quantile, rho)


def frank_theta_from_tau(tau):
    """Frank copula parameter matching a Kendall's tau (numeric inversion)."""

    def ktau(theta):
        if abs(theta) < 1e-9:
            return 0.0
        from scipy.integrate import quad

        debye = quad(lambda t: t / np.expm1(t), 0, theta)[0] / theta
        return 1.0 + 4.0 * (debye - 1.0) / theta

    return optimize.brentq(lambda th: ktau(th) - tau, -50, 50)
