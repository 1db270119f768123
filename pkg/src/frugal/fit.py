"""Likelihood fitting and comparison estimators.

The observational log-likelihood of a marginal-kernel model decomposes as

    sum_t log p(x_t | past)  +  log w(z | x)  +  log p(y | z, x),

so the treatment ("propensity") parameters separate additively from the
covariate, causal-margin, and dependence parameters: a parameter cut.
Maximizing the whole thing against observational data is consistent for
the causal pieces, with standard errors from the observed information or a
sandwich correction.  IPW, plain outcome regression, and AIPW estimators
are provided for comparison, plus a replication-study harness.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import optimize

from frugal.construct import outcome_conditional, past_obs_density
from frugal.dependence import CopulaSpec, OddsRatioSpec, PairSpec, VineSpec
from frugal.model import FrugalModel, LinearPredictor, ModelError, VariableSpec, expit
from frugal.sample import Dataset, rejection_resample


# ---------------------------------------------------------------------------
# parameter flattening: every free coefficient gets a name, a path, and a
# transform to an unconstrained scale (log for variances)


@dataclass(frozen=True)
class _Param:
    label: str
    path: tuple  # how to write the value back into the model
    transform: str = "identity"  # or "log"

    def to_unconstrained(self, v):
        return np.log(v) if self.transform == "log" else v

    def to_natural(self, u):
        return np.exp(u) if self.transform == "log" else u


def _predictor_params(prefix, lp: LinearPredictor, base_path):
    out = [_Param(f"{prefix}.intercept", base_path + ("intercept",))]
    for j, (names, _) in enumerate(lp.terms):
        out.append(_Param(f"{prefix}.{':'.join(names)}", base_path + ("term", j)))
    return out


def param_map(m: FrugalModel, fit_past=True):
    """All free parameters of a model, in a fixed deterministic order."""
    params: list[_Param] = []
    if fit_past:
        for i, v in enumerate(m.past):
            if v.family == "categorical":
                continue  # level probabilities held fixed
            params += _predictor_params(v.name, v.predictor, ("past", i, "pred"))
            if v.family == "gaussian":
                params.append(_Param(f"{v.name}.variance", ("past", i, "variance"), "log"))
    params += _predictor_params(m.outcome.name, m.outcome.predictor, ("outcome", None, "pred"))
    if m.outcome.family == "gaussian":
        params.append(_Param(f"{m.outcome.name}.variance", ("outcome", None, "variance"), "log"))
    dep = m.dependence
    if isinstance(dep, CopulaSpec):
        params += _predictor_params("dep", dep.param_predictor, ("dep", None, "pred"))
    elif isinstance(dep, OddsRatioSpec):
        params += _predictor_params("dep", dep.log_or_predictor, ("dep", None, "pred"))
    elif isinstance(dep, VineSpec):
        for k, pr in enumerate(dep.pairs):
            params += _predictor_params(
                f"dep.{pr.pair[0]}:{pr.pair[1]}", pr.param_predictor, ("dep", k, "pred")
            )
    return params


def get_theta(m: FrugalModel, params=None):
    params = params or param_map(m)
    out = []
    for p in params:
        kind, idx, what = p.path[:3]
        if kind == "past":
            obj = m.past[idx]
        elif kind == "outcome":
            obj = m.outcome
        else:
            dep = m.dependence
            obj = dep.pairs[idx] if isinstance(dep, VineSpec) else dep
        if what == "variance":
            val = obj.variance
        else:
            lp = _lp_of(obj)
            val = lp.intercept if p.path[3] == "intercept" else lp.terms[p.path[4]][1]
        out.append(p.to_unconstrained(val))
    return np.array(out, dtype=float)


def _lp_of(obj):
    if isinstance(obj, CopulaSpec) or isinstance(obj, PairSpec):
        return obj.param_predictor
    if isinstance(obj, OddsRatioSpec):
        return obj.log_or_predictor
    return obj.predictor


def _with_lp(obj, lp):
    if isinstance(obj, (CopulaSpec, PairSpec)):
        return replace(obj, param_predictor=lp)
    if isinstance(obj, OddsRatioSpec):
        return replace(obj, log_or_predictor=lp)
    return replace(obj, predictor=lp)


def set_theta(m: FrugalModel, theta, params=None) -> FrugalModel:
    """Rebuild the model with new parameter values (unconstrained scale)."""
    params = params or param_map(m)
    past = list(m.past)
    outcome = m.outcome
    dep = m.dependence
    pairs = list(dep.pairs) if isinstance(dep, VineSpec) else None
    for p, u in zip(params, theta):
        val = p.to_natural(u)
        kind, idx, what = p.path[:3]
        if kind == "past":
            obj = past[idx]
        elif kind == "outcome":
            obj = outcome
        else:
            obj = pairs[idx] if pairs is not None else dep
        if what == "variance":
            obj = replace(obj, variance=float(val))
        else:
            lp = _lp_of(obj)
            if p.path[3] == "intercept":
                lp = replace(lp, intercept=float(val))
            else:
                j = p.path[4]
                terms = list(lp.terms)
                terms[j] = (terms[j][0], float(val))
                lp = replace(lp, terms=tuple(terms))
            obj = _with_lp(obj, lp)
        if kind == "past":
            past[idx] = obj
        elif kind == "outcome":
            outcome = obj
        elif pairs is not None:
            pairs[idx] = obj
        else:
            dep = obj
    if pairs is not None:
        dep = replace(dep, pairs=tuple(pairs))
    return replace(m, past=tuple(past), outcome=outcome, dependence=dep)


# ---------------------------------------------------------------------------
# likelihood


def loglik_rows(m: FrugalModel, theta, data) -> np.ndarray:
    """Per-row observational log-likelihood at unconstrained parameters."""
    params = param_map(m)
    mm = set_theta(m, theta, params)
    cols = data.columns if isinstance(data, Dataset) else dict(data)
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = past_obs_density(mm, cols) * outcome_conditional(mm, cols)
        ll = np.log(dens)
    return ll


def loglik(m: FrugalModel, theta, data) -> float:
    """Total observational log-likelihood; flags non-finite rows."""
    ll = loglik_rows(m, theta, data)
    if not np.all(np.isfinite(ll)):
        bad = int(np.flatnonzero(~np.isfinite(ll))[0])
        raise ModelError(f"non-finite log-likelihood at row {bad}")
    return float(ll.sum())


@dataclass
class FitResult:
    """Estimates with uncertainty and convergence metadata."""

    names: list[str]
    estimates: np.ndarray
    se: np.ndarray
    cov: np.ndarray | None = None
    sandwich: np.ndarray | None = None
    loglik: float | None = None
    information: np.ndarray | None = None
    converged: bool = True
    n_iter: int = 0
    grad_norm: float = np.nan
    diagnostics: dict = field(default_factory=dict)

    def coef(self, name):
        return float(self.estimates[self.names.index(name)])

    def coef_se(self, name):
        return float(self.se[self.names.index(name)])

    def to_frame(self):
        return pd.DataFrame(
            {"parameter": self.names, "estimate": self.estimates, "se": self.se}
        )


def _fd_hessian(fn, x, eps=None):
    k = len(x)
    eps = eps if eps is not None else 1e-4 * np.maximum(1.0, np.abs(x))
    H = np.zeros((k, k))
    for i in range(k):
        for j in range(i, k):
            ei = np.zeros(k); ei[i] = eps[i]
            ej = np.zeros(k); ej[j] = eps[j]
            f_pp = fn(x + ei + ej)
            f_pm = fn(x + ei - ej)
            f_mp = fn(x - ei + ej)
            f_mm = fn(x - ei - ej)
            H[i, j] = H[j, i] = (f_pp - f_pm - f_mp + f_mm) / (4 * eps[i] * eps[j])
    return H


def _fd_grad_rows(fn_rows, x, eps=None):
    """Per-row score matrix via central differences; fn_rows returns n-vector."""
    k = len(x)
    eps = eps if eps is not None else 1e-5 * np.maximum(1.0, np.abs(x))
    cols = []
    for i in range(k):
        e = np.zeros(k); e[i] = eps[i]
        cols.append((fn_rows(x + e) - fn_rows(x - e)) / (2 * eps[i]))
    return np.column_stack(cols)


def mle_fit(m: FrugalModel, data, init=None) -> FitResult:
    """Maximize the observational likelihood over all model parameters.

    Quasi-Newton with numerical gradients, up to 500 iterations, with three
    jittered restarts on failure.  Standard errors come from the inverse
    observed information; by the parameter cut, the block for the causal
    margin and dependence parameters is unaffected by the propensity piece.
    """
    params = param_map(m)
    n = len(data)
    x0 = np.asarray(init, float) if init is not None else get_theta(m, params)

    def nll(theta):
        ll = loglik_rows(m, theta, data)
        ll = np.where(np.isfinite(ll), ll, -1e10)
        return -float(ll.mean())

    best = None
    rng = np.random.default_rng(1)
    for attempt in range(4):
        start = x0 if attempt == 0 else x0 + rng.normal(0, 0.3, len(x0))
        res = optimize.minimize(
            nll, start, method="BFGS",
            options={"maxiter": 500, "gtol": 1e-6},
        )
        if best is None or res.fun < best.fun - 1e-12:
            best = res
        if res.success or np.linalg.norm(res.jac) < 1e-4:
            best = res if res.fun <= best.fun else best
            break
    theta_hat = best.x
    info = n * _fd_hessian(nll, theta_hat)  # observed information
    info = 0.5 * (info + info.T)
    try:
        cov_u = np.linalg.inv(info)
    except np.linalg.LinAlgError as e:
        raise ModelError("singular observed information") from e
    # delta method back to the natural scale
    nat = np.array([p.to_natural(u) for p, u in zip(params, theta_hat)])
    jac = np.array([v if p.transform == "log" else 1.0 for p, v in zip(params, nat)])
    cov = cov_u * np.outer(jac, jac)
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    return FitResult(
        names=[p.label for p in params],
        estimates=nat,
        se=se,
        cov=cov,
        loglik=-best.fun * n,
        information=info,
        converged=bool(best.success or np.linalg.norm(best.jac) < 1e-4),
        n_iter=int(best.nit),
        grad_norm=float(np.linalg.norm(best.jac)),
    )


def sandwich_cov(m: FrugalModel, theta_hat, data) -> np.ndarray:
    """Robust covariance B^{-1} A B^{-1} from per-row scores and the Hessian."""
    n = len(data)
    theta_hat = np.asarray(theta_hat, float)
    scores = _fd_grad_rows(lambda t: loglik_rows(m, t, data), theta_hat)
    A = scores.T @ scores / n
    B = _fd_hessian(lambda t: -float(loglik_rows(m, t, data).mean()), theta_hat)
    try:
        Binv = np.linalg.inv(0.5 * (B + B.T))
    except np.linalg.LinAlgError as e:
        raise ModelError("singular Hessian in sandwich") from e
    return Binv @ A @ Binv / n


# ---------------------------------------------------------------------------
# design-matrix regression machinery (shared by IPW / OR / DR)


def design_matrix(terms, data) -> np.ndarray:
    """Columns: intercept then products of the named variables per term."""
    cols = data.columns if isinstance(data, Dataset) else data
    n = len(next(iter(cols.values())))
    X = [np.ones(n)]
    for t in terms:
        col = np.ones(n)
        for name in t:
            col = col * np.asarray(cols[name], float)
        X.append(col)
    return np.column_stack(X)


def term_names(terms):
    return ["intercept"] + [":".join(t) for t in terms]


def logistic_irls(X, y, weights=None, max_iter=100, tol=1e-10):
    """Newton-Raphson logistic regression; returns (beta, fitted p)."""
    w0 = np.ones(len(y)) if weights is None else np.asarray(weights, float)
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        p = expit(X @ beta)
        W = w0 * p * (1 - p)
        g = X.T @ (w0 * (y - p))
        H = X.T @ (X * W[:, None])
        step = np.linalg.solve(H + 1e-10 * np.eye(len(beta)), g)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    return beta, expit(X @ beta)


def firth_logistic_irls(X, y, weights=None, max_iter=200, tol=1e-10):
    """Bias-reduced (Firth) logistic regression; returns (beta, fitted p).

    The score is penalized by half the leverage, removing the O(1/n)
    first-order bias of the MLE; with rare events the plain MLE inflates
    coefficients away from zero, so this is the right pooled-fit default
    when events are scarce.  External ``weights`` enter the information
    and the leverages as case weights.
    """
    w0 = np.ones(len(y)) if weights is None else np.asarray(weights, float)
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        p = expit(X @ beta)
        W = w0 * p * (1 - p)
        H = X.T @ (X * W[:, None]) + 1e-10 * np.eye(X.shape[1])
        Hinv = np.linalg.inv(H)
        lev = W * np.einsum("ij,jk,ik->i", X, Hinv, X)
        g = X.T @ (w0 * (y - p) + lev * (0.5 - p))
        step = Hinv @ g
        if np.max(np.abs(step)) > 5.0:  # damp early wild steps
            step = step * (5.0 / np.max(np.abs(step)))
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    return beta, expit(X @ beta)


def wls_hc0(X, y, w):
    """Weighted least squares with HC0 robust covariance."""
    Xw = X * w[:, None]
    XtWX = X.T @ Xw
    beta = np.linalg.solve(XtWX, Xw.T @ y)
    resid = y - X @ beta
    meat = (X * (w * resid)[:, None]).T @ (X * (w * resid)[:, None])
    bread = np.linalg.inv(XtWX)
    cov = bread @ meat @ bread
    return beta, cov


def weighted_exp_glm(X, y, w):
    """Exponential GLM with mean exp(-X beta), weighted, robust covariance."""
    beta = np.zeros(X.shape[1])
    for _ in range(100):
        lam = np.exp(X @ beta)  # rate = 1/mean
        g = X.T @ (w * (y * lam - 1.0))  # d/dbeta of w*(log lam - y lam) negated
        H = X.T @ (X * (w * y * lam)[:, None])
        step = np.linalg.solve(H, -g)
        beta = beta + step
        if np.max(np.abs(step)) < 1e-10:
            break
    lam = np.exp(X @ beta)
    score = X * (w * (1.0 - y * lam))[:, None]
    bread = np.linalg.inv(X.T @ (X * (w * y * lam)[:, None]))
    cov = bread @ (score.T @ score) @ bread
    return beta, cov


WEIGHT_CAP_QUANTILE = 0.999


def stabilized_weights(treat_terms: dict, data, diagnostics=None) -> np.ndarray:
    """Stabilized IPW weights: product over treatments of p(x|x-past)/p(x|all).

    ``treat_terms`` maps each treatment name to (numerator terms, denominator
    terms); numerators typically involve earlier treatments only.
    """
    cols = data.columns if isinstance(data, Dataset) else data
    n = len(next(iter(cols.values())))
    w = np.ones(n)
    for name, (num_terms, den_terms) in treat_terms.items():
        t = np.asarray(cols[name], float)
        _, p_den = logistic_irls(design_matrix(den_terms, cols), t)
        _, p_num = logistic_irls(design_matrix(num_terms, cols), t)
        w = w * np.where(t > 0.5, p_num / p_den, (1 - p_num) / (1 - p_den))
    cap = np.quantile(w, WEIGHT_CAP_QUANTILE)
    n_capped = int(np.sum(w > cap))
    if diagnostics is not None:
        diagnostics["weights_capped"] = n_capped
        diagnostics["max_weight"] = float(np.max(w))
    return np.minimum(w, cap)


def ipw_fit(msm_terms, treat_terms: dict, data, outcome="y",
            family="gaussian") -> FitResult:
    """MSM fit by stabilized inverse probability weighting, robust SEs."""
    cols = data.columns if isinstance(data, Dataset) else data
    diagnostics: dict = {}
    w = stabilized_weights(treat_terms, cols, diagnostics)
    X = design_matrix(msm_terms, cols)
    y = np.asarray(cols[outcome], float)
    if family == "gaussian":
        beta, cov = wls_hc0(X, y, w)
    elif family == "exponential":
        beta, cov = weighted_exp_glm(X, y, w)
    else:
        raise ModelError(f"ipw_fit: unsupported family {family!r}")
    return FitResult(
        names=term_names(msm_terms),
        estimates=beta,
        se=np.sqrt(np.diag(cov)),
        cov=cov,
        sandwich=cov,
        diagnostics=diagnostics,
    )


def outcome_regression_fit(msm_terms, data, outcome="y") -> FitResult:
    """Plain regression of the outcome on treatments only (the naive baseline)."""
    cols = data.columns if isinstance(data, Dataset) else data
    X = design_matrix(msm_terms, cols)
    y = np.asarray(cols[outcome], float)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ModelError("rank-deficient design")
    beta, cov = wls_hc0(X, y, np.ones(len(y)))
    return FitResult(names=term_names(msm_terms), estimates=beta,
                     se=np.sqrt(np.diag(cov)), cov=cov)


def dr_fit(outcome_terms, treat_terms: dict, data, outcome="y",
           treatments=("a", "b")) -> FitResult:
    """AIPW estimate of the saturated MSM over binary treatment cells.

    Per-cell augmented means are combined into (intercept, main effects,
    interaction) contrasts; SEs come from the empirical influence functions
    mapped through the same linear contrasts.
    """
    cols = data.columns if isinstance(data, Dataset) else data
    n = len(next(iter(cols.values())))
    y = np.asarray(cols[outcome], float)
    # outcome (Q) model: regression on treatments and confounders
    Xq = design_matrix(outcome_terms, cols)
    bq, _ = wls_hc0(Xq, y, np.ones(n))
    # propensity per treatment
    p_fit = {}
    for name, (_, den_terms) in treat_terms.items():
        _, p_fit[name] = logistic_irls(design_matrix(den_terms, cols), np.asarray(cols[name], float))
    t_obs = {name: np.asarray(cols[name], float) for name in treatments}
    cells = [(0, 0), (1, 0), (0, 1), (1, 1)]
    inf = np.zeros((n, 4))
    mu = np.zeros(4)
    for k, (av, bv) in enumerate(cells):
        cf = dict(cols)
        cf[treatments[0]] = np.full(n, float(av))
        cf[treatments[1]] = np.full(n, float(bv))
        q = design_matrix(outcome_terms, cf) @ bq
        ind = (t_obs[treatments[0]] == av) & (t_obs[treatments[1]] == bv)
        pi = np.ones(n)
        for name, val in zip(treatments, (av, bv)):
            pi = pi * np.where(val == 1, p_fit[name], 1 - p_fit[name])
        pi = np.clip(pi, 1e-6, None)
        contrib = ind / pi * (y - q) + q
        mu[k] = contrib.mean()
        inf[:, k] = contrib - mu[k]
    # map cells (00,10,01,11) to (intercept, a, b, ab)
    L = np.array([
        [1, 0, 0, 0],
        [-1, 1, 0, 0],
        [-1, 0, 1, 0],
        [1, -1, -1, 1],
    ], dtype=float)
    beta = L @ mu
    cov = L @ (inf.T @ inf / n) @ L.T / n
    return FitResult(
        names=["intercept", treatments[0], treatments[1],
               f"{treatments[0]}:{treatments[1]}"],
        estimates=beta,
        se=np.sqrt(np.diag(cov)),
        cov=cov,
    )


# ---------------------------------------------------------------------------
# simulation-study harness


def sec_metric(est, truth, ses) -> float:
    """Standard error calibration: sqrt(mean(bias^2 / se^2)); 1 = calibrated."""
    est = np.asarray(est, float)
    ses = np.asarray(ses, float)
    if np.any(ses <= 0):
        raise ModelError("sec_metric: zero standard error")
    return float(np.sqrt(np.mean((est - truth) ** 2 / ses**2)))


@dataclass
class StudyReport:
    """Replication-study summary: bias, coverage, and sec per method/parameter."""

    table: pd.DataFrame  # columns: method, parameter, bias, cover90, sec
    n_fail: dict = field(default_factory=dict)

    def to_csv(self, path):
        self.table.to_csv(path, index=False)

    def row(self, method, parameter):
        t = self.table
        sel = t[(t.method == method) & (t.parameter == parameter)]
        return sel.iloc[0]


_Z90 = 1.6448536269514722


def run_study(scenario: dict, N: int, n: int, seed: int = 0,
              threads: int = 1) -> StudyReport:
    """Simulate N datasets of size n and compare estimators of the MSM.

    ``scenario`` needs: 'model' (FrugalModel), 'truth' (dict of true MSM
    coefficients), 'msm_terms', 'treat_terms', and optionally
    'outcome_terms' for the DR outcome model and 'methods'.
    """
    m = scenario["model"]
    truth = scenario["truth"]
    msm_terms = scenario["msm_terms"]
    treat_terms = scenario["treat_terms"]
    outcome_terms = scenario.get("outcome_terms", msm_terms)
    methods = scenario.get("methods", ("or", "ipw", "dr", "mle"))
    treatments = tuple(t.name for t in m.treatments)
    mle_param_of = scenario.get("mle_param_of", {})

    results: dict = {meth: {p: [] for p in truth} for meth in methods}
    ses: dict = {meth: {p: [] for p in truth} for meth in methods}
    n_fail = {meth: 0 for meth in methods}
    for rep in range(N):
        data = rejection_resample(m, n, seed=seed * 1_000_003 + rep, threads=threads)
        for meth in methods:
            try:
                if meth == "or":
                    fr = outcome_regression_fit(msm_terms, data)
                elif meth == "ipw":
                    fr = ipw_fit(msm_terms, treat_terms, data)
                elif meth == "dr":
                    fr = dr_fit(outcome_terms, treat_terms, data,
                                treatments=treatments)
                elif meth == "mle":
                    fr = mle_fit(m, data)
                else:
                    raise ModelError(f"unknown method {meth!r}")
            except (ModelError, np.linalg.LinAlgError):
                n_fail[meth] += 1
                continue
            for p in truth:
                label = mle_param_of.get(p, p) if meth == "mle" else p
                results[meth][p].append(fr.coef(label))
                ses[meth][p].append(fr.coef_se(label))
    rows = []
    for meth in methods:
        for p, tv in truth.items():
            est = np.array(results[meth][p])
            se = np.array(ses[meth][p])
            cover = np.mean(np.abs(est - tv) <= _Z90 * se)
            rows.append(
                {
                    "method": meth,
                    "parameter": p,
                    "bias": float(np.mean(est - tv)),
                    "cover90": float(cover),
                    "sec": sec_metric(est, tv, se),
                }
            )
    return StudyReport(table=pd.DataFrame(rows), n_fail=n_fail)
