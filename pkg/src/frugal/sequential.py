"""Longitudinal extensions: survival MSMs, SNMMs, and nested construction.

Discrete-time survival with a marginal hazard-ratio model: the per-time
hazard coefficients of the conditional logistic model are not free once
the marginal log hazard ratios psi are fixed, so we solve for them.  The
structural nested mean model (SNMM) construction recovers the full
conditional outcome table from baseline margins, per-time "blips", and
conditional odds ratios, via an iterated combine/condition recursion.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from frugal.dependence import ProbabilityTable, joint_cells
from frugal.model import LinearPredictor, ModelError, expit, logit
from frugal.sample import Dataset, _stream


# ---------------------------------------------------------------------------
# discrete-time survival with marginal hazard ratios


@dataclass(frozen=True)
class SurvivalSpec:
    """Two-lag discrete-time survival model with marginal hazard ratios.

    Conditional models (all logistic, binary L/A/Y, Y=1 absorbing):
        logit P(L_t = 1 | past)       = beta1 * a_{t-1}
        logit P(A_t = 1 | past)       = alpha_star + alpha0 * l_t
        logit P(Y_t = 1 | past, Y=0)  = theta_star + theta_a0 a_t
                                        + theta_l0 l_t + theta_a1 a_{t-1}
    The marginal model fixes log hazard ratios relative to never-treated:
        psi0 (current treatment), psi1 (previous), psi01 (interaction,
        optional: implied by the others when None).
    """

    T: int
    alpha_star: float
    alpha0: float
    beta1: float
    theta_star: float
    theta_l0: float
    psi0: float
    psi1: float = 0.0
    psi01: float | None = None

    def __post_init__(self):
        if self.T < 2:
            raise ModelError("survival horizon must be >= 2")


def _hazard(theta_a0, theta_a1, spec: SurvivalSpec, a_t, a_prev):
    """Marginal hazard at (a_t, a_{t-1}): average over the covariate."""
    p_l = expit(spec.beta1 * a_prev)
    return (1 - p_l) * expit(
        spec.theta_star + theta_a0 * a_t + theta_a1 * a_prev
    ) + p_l * expit(
        spec.theta_star + theta_a0 * a_t + spec.theta_l0 + theta_a1 * a_prev
    )


def gformula_survival(spec: SurvivalSpec, theta_a0: float, theta_a1: float,
                      path) -> np.ndarray:
    """Per-time hazards under a fixed treatment path, by exact summation.

    Because the covariate is memoryless given the previous treatment, the
    sum over covariate histories collapses to a single average per time.
    """
    path = np.asarray(path, dtype=float)
    T = len(path)
    if T > 20:
        raise ModelError("horizon too large for exact enumeration (T <= 20)")
    out = np.empty(T)
    for t in range(T):
        a_prev = path[t - 1] if t > 0 else 0.0
        out[t] = _hazard(theta_a0, theta_a1, spec, path[t], a_prev)
    return out


def survival_theta_from_psi(spec: SurvivalSpec):
    """Solve (theta_a0, theta_a1) so the marginal hazard ratios equal psi.

    The defining equations decouple: psi0 involves only theta_a0 (at
    a_{t-1} = 0) and psi1 only theta_a1 (at a_t = 0); psi01 is then implied
    rather than free.  Returns (theta_a0, theta_a1, psi01_implied).
    """
    h00 = _hazard(0.0, 0.0, spec, 0.0, 0.0)
    target10 = np.exp(spec.psi0) * h00
    target01 = np.exp(spec.psi1) * h00
    if not (0 < target10 < 1 and 0 < target01 < 1):
        raise ModelError("requested hazard ratios imply hazards outside (0,1)")

    ta0 = optimize.brentq(
        lambda t: _hazard(t, 0.0, spec, 1.0, 0.0) - target10, -40, 40, xtol=1e-14
    )
    ta1 = optimize.brentq(
        lambda t: _hazard(ta0, t, spec, 0.0, 1.0) - target01, -40, 40, xtol=1e-14
    )
    h = lambda at, ap: _hazard(ta0, ta1, spec, at, ap)
    psi01_implied = float(
        np.log(h(1, 1)) - np.log(h00) - spec.psi0 - spec.psi1
    )
    resid = max(
        abs(np.log(h(1, 0) / h00) - spec.psi0),
        abs(np.log(h(0, 1) / h00) - spec.psi1),
    )
    if spec.psi01 is not None:
        resid = max(resid, abs(psi01_implied - spec.psi01))
    if resid > 1e-8:
        raise ModelError(
            f"hazard-ratio equations not satisfied (residual {resid:.2e}); "
            "psi01 is implied by the conditional model and cannot be set freely"
        )
    return float(ta0), float(ta1), psi01_implied


def survival_simulate(spec: SurvivalSpec, n: int, seed: int = 0) -> Dataset:
    """Forward-simulate the longitudinal model; Y coded 1 from failure on."""
    ta0, ta1, _ = survival_theta_from_psi(spec)
    cols: dict[str, np.ndarray] = {}
    a_prev = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    a_frozen = np.zeros(n)
    l_frozen = np.zeros(n)
    dead = np.zeros(n, dtype=bool)
    for t in range(1, spec.T + 1):
        ul = _stream(seed, t, "l").random(n)
        ua = _stream(seed, t, "a").random(n)
        uy = _stream(seed, t, "y").random(n)
        l_t = np.where(alive, (ul > 1 - expit(spec.beta1 * a_prev)).astype(float),
                       l_frozen)
        a_t = np.where(
            alive,
            (ua > 1 - expit(spec.alpha_star + spec.alpha0 * l_t)).astype(float),
            a_frozen,
        )
        haz = expit(spec.theta_star + ta0 * a_t + spec.theta_l0 * l_t + ta1 * a_prev)
        die = alive & (uy > 1 - haz)
        dead = dead | die
        cols[f"l{t}"] = l_t
        cols[f"a{t}"] = a_t
        cols[f"y{t}"] = dead.astype(float)
        a_prev = np.where(alive, a_t, a_prev)
        l_frozen, a_frozen = l_t, a_t
        alive = alive & ~die
    return Dataset(cols)


def survival_ipw_fit(data: Dataset, T: int):
    """IPW pooled-logistic estimate of the marginal hazard-ratio parameters.

    Stabilized weights from per-period treatment models (numerator on the
    previous treatment, denominator adding the current covariate), then a
    weighted pooled logistic regression of failure on (a_t, a_{t-1},
    a_t*a_{t-1}) over at-risk person-periods.  Returns (psi0, psi1, psi01)
    estimates with robust SEs.
    """
    from frugal.fit import firth_logistic_irls, logistic_irls

    rows_y, rows_at, rows_ap, rows_w = [], [], [], []
    n = len(data)
    w_cum = np.ones(n)
    a_prev = np.zeros(n)
    at_risk = np.ones(n, dtype=bool)
    for t in range(1, T + 1):
        l_t, a_t, y_t = data[f"l{t}"], data[f"a{t}"], data[f"y{t}"]
        idx = at_risk
        if idx.sum() == 0:
            break
        a_i, ap_i, l_i = a_t[idx], a_prev[idx], l_t[idx]
        # the regressors are binary, so each treatment model collapses onto
        # its covariate cells: fit on cell counts and cell means instead of
        # person-periods (identical likelihood, far fewer rows)
        gn = (ap_i > 0.5).astype(int)
        gd = gn * 2 + (l_i > 0.5).astype(int)
        cn = np.bincount(gn, minlength=2).astype(float)
        cd = np.bincount(gd, minlength=4).astype(float)
        with np.errstate(invalid="ignore"):
            mn = np.bincount(gn, weights=a_i, minlength=2) / cn
            md = np.bincount(gd, weights=a_i, minlength=4) / cd
        # numerator model (1, a_prev) is saturated: fitted = cell mean
        pn = mn
        kd = cd > 0
        Xd = np.column_stack([np.ones(4), [0.0, 0.0, 1.0, 1.0],
                              [0.0, 1.0, 0.0, 1.0]])[kd]
        bd, _ = logistic_irls(Xd, md[kd], weights=cd[kd])
        pd_ = np.full(4, np.nan)
        pd_[kd] = expit(Xd @ bd)
        pn_i, pd_i = pn[gn], pd_[gd]
        ratio = np.where(a_i > 0.5, pn_i / pd_i, (1 - pn_i) / (1 - pd_i))
        w_cum_t = np.ones(n)
        w_cum_t[idx] = ratio
        w_cum = w_cum * w_cum_t
        rows_y.append(y_t[idx])
        rows_at.append(a_t[idx])
        rows_ap.append(a_prev[idx])
        rows_w.append(w_cum[idx])
        at_risk = at_risk & (y_t < 0.5)
        a_prev = a_t.copy()
    y = np.concatenate(rows_y)
    at = np.concatenate(rows_at)
    ap = np.concatenate(rows_ap)
    w = np.concatenate(rows_w)
    # collapse person-periods onto the 8 (a_t, a_prev, y) patterns: the
    # weighted score, information, and Jeffreys penalty depend on the data
    # only through the pattern sums of w (and the sandwich through w^2)
    grp = ((at > 0.5).astype(int) * 4 + (ap > 0.5).astype(int) * 2
           + (y > 0.5).astype(int))
    sw = np.bincount(grp, weights=w, minlength=8)
    sw2 = np.bincount(grp, weights=w * w, minlength=8)
    at_g = np.repeat([0.0, 1.0], 4)
    ap_g = np.tile(np.repeat([0.0, 1.0], 2), 2)
    y_g = np.tile([0.0, 1.0], 4)
    keep = sw > 0
    Xg = np.column_stack([np.ones(8), at_g, ap_g, at_g * ap_g])[keep]
    # events are rare by design, so use the bias-reduced pooled fit
    beta, p = firth_logistic_irls(Xg, y_g[keep], weights=sw[keep])
    resid2 = sw2[keep] * (y_g[keep] - p) ** 2
    meat = (Xg * resid2[:, None]).T @ Xg
    H = Xg.T @ (Xg * (sw[keep] * p * (1 - p))[:, None])
    bread = np.linalg.inv(H)
    cov = bread @ meat @ bread
    return beta[1:], np.sqrt(np.diag(cov))[1:]


# ---------------------------------------------------------------------------
# contrast recovery (baseline + contrast -> both arms)


@dataclass(frozen=True)
class ContrastPair:
    """A marginal outcome probability plus a treated-vs-control contrast."""

    baseline: float  # p(y=1 | z), marginal over the binary x
    contrast: float
    kind: str  # 'rd', 'rr', or 'or'

    def __post_init__(self):
        if self.kind not in ("rd", "rr", "or"):
            raise ModelError(f"unknown contrast kind {self.kind!r}")
        if not 0 < self.baseline < 1:
            raise ModelError("baseline probability must be in (0,1)")


def contrast_recover(pair: ContrastPair, p_x_given_z: float):
    """Both arms (p0, p1) of p(y | z, x) from a marginal and a contrast.

    Solves (1-pi)*p0 + pi*p1 = baseline with p1 determined from p0 by the
    declared contrast; closed form for risk differences/ratios and the
    stable quadratic root for odds ratios.
    """
    q, pi = pair.baseline, float(p_x_given_z)
    if not 0 <= pi <= 1:
        raise ModelError("mixing probability outside [0,1]")
    if pair.kind == "rd":
        p0 = q - pi * pair.contrast
        p1 = p0 + pair.contrast
    elif pair.kind == "rr":
        if pair.contrast <= 0:
            raise ModelError("risk ratio must be positive")
        p0 = q / ((1 - pi) + pi * pair.contrast)
        p1 = p0 * pair.contrast
    else:
        w = pair.contrast
        if w <= 0:
            raise ModelError("odds ratio must be positive")
        if abs(w - 1) < 1e-12:
            p0 = p1 = q
        else:
            # (1-pi) p0 + pi * w p0 / (1 + (w-1) p0) = q: quadratic in p0
            A = (1 - pi) * (w - 1)
            B = (1 - pi) + pi * w - q * (w - 1)
            C = -q
            if abs(A) < 1e-14:
                p0 = -C / B
            else:
                disc = B * B - 4 * A * C
                p0 = (-B + np.sqrt(disc)) / (2 * A)
                if not 0 < p0 < 1:
                    p0 = (-B - np.sqrt(disc)) / (2 * A)
            p1 = w * p0 / (1 + (w - 1) * p0)
    if not (0 < p0 < 1 and 0 < p1 < 1):
        raise ModelError(
            f"contrast {pair.contrast} ({pair.kind}) infeasible at "
            f"baseline {q}, mixing {pi}"
        )
    return float(p0), float(p1)


# ---------------------------------------------------------------------------
# structural nested mean models


@dataclass(frozen=True)
class SnmmSpec:
    """SNMM over T periods of binary (l_t, a_t) and a final binary outcome.

    All predictors are linear on the probability / log-OR scale and may
    reference earlier variables by name (l1, a1, l2, a2, ...):
      * ``p_l[t]``: P(l_{t+1} = 1 | history through a_t), for t = 0..T-1
        (p_l[0] is the marginal of l1);
      * ``p_a[t]``: P(a_{t+1} = 1 | history through l_{t+1});
      * ``baseline``: P(y = 1 | l1, all treatments at 0), in l1 only;
      * ``blips[t]``: contrast applied when a_{t+1} = 1 versus 0, with all
        later treatments at 0; predictor in history before a_{t+1};
      * ``log_ors[t]``: conditional log odds ratio of (y, l_{t+2}) given
        history through a_{t+1}, for t = 0..T-2.
    """

    T: int
    p_l: tuple[LinearPredictor, ...]
    p_a: tuple[LinearPredictor, ...]
    baseline: LinearPredictor
    blips: tuple[LinearPredictor, ...]
    log_ors: tuple[LinearPredictor, ...]
    blip_kind: str = "rd"

    def __post_init__(self):
        if self.T < 1:
            raise ModelError("T must be >= 1")
        if len(self.p_l) != self.T or len(self.p_a) != self.T:
            raise ModelError("need T covariate and T treatment models")
        if len(self.blips) != self.T:
            raise ModelError("need one blip per period")
        if len(self.log_ors) != self.T - 1:
            raise ModelError("need T-1 association odds ratios")
        if self.blip_kind not in ("rd", "rr", "or"):
            raise ModelError(f"unknown blip kind {self.blip_kind!r}")


def _apply_blip(p0, blip, kind):
    if kind == "rd":
        return p0 + blip
    if kind == "rr":
        return p0 * blip
    return expit(logit(p0) + blip)  # blip on the log-odds scale


def snmm_joint(spec: SnmmSpec) -> ProbabilityTable:
    """Exact conditional outcome table p(y=1 | l1..lT, a1..aT).

    Inductively maintains p(y=1 | history, later treatments at 0): apply
    the period blip to switch the current treatment on, then combine with
    the next covariate via the margins-plus-odds-ratio construction and
    condition on its value.
    """
    T = spec.T
    names: list[str] = []
    for t in range(1, T + 1):
        names += [f"l{t}", f"a{t}"]
    # cur[history-tuple of (l1, a1, ..., lt, at)] = p(y=1 | history, 0-future)
    cur: dict[tuple, float] = {}
    for l1 in (0.0, 1.0):
        h = {"l1": l1}
        base = float(spec.baseline.eval(h))
        if not 0 < base < 1:
            raise ModelError(f"baseline probability {base} outside (0,1) at l1={l1}")
        for a1 in (0.0, 1.0):
            h1 = {"l1": l1, "a1": a1}
            p = base if a1 == 0 else _apply_blip(
                base, float(spec.blips[0].eval(h1)), spec.blip_kind
            )
            if not 0 < p < 1:
                raise ModelError(f"blip at period 1 gives probability {p}")
            cur[(l1, a1)] = p
    for t in range(2, T + 1):
        nxt: dict[tuple, float] = {}
        for hist, p_y in cur.items():
            hvars = dict(zip(names[: len(hist)], hist))
            p_l = float(spec.p_l[t - 1].eval(hvars))
            if not 0 < p_l < 1:
                raise ModelError(f"covariate probability {p_l} at period {t}")
            psi = float(np.exp(spec.log_ors[t - 2].eval(hvars)))
            p11, p10, p01, p00 = joint_cells(p_y, p_l, psi)
            cond = {0.0: p10 / (p10 + p00), 1.0: p11 / (p11 + p01)}
            for l_t in (0.0, 1.0):
                p0 = cond[l_t]
                hv = {**hvars, f"l{t}": l_t}
                for a_t in (0.0, 1.0):
                    hv2 = {**hv, f"a{t}": a_t}
                    p = p0 if a_t == 0 else _apply_blip(
                        p0, float(spec.blips[t - 1].eval(hv2)), spec.blip_kind
                    )
                    if not 0 < p < 1:
                        raise ModelError(
                            f"period-{t} construction gives probability {p} "
                            f"at history {hv2}"
                        )
                    nxt[hist + (l_t, a_t)] = p
        cur = nxt
    probs = np.empty([2] * (2 * T) + [2])
    for hist, p in cur.items():
        idx = tuple(int(v) for v in hist)
        probs[idx + (1,)] = p
        probs[idx + (0,)] = 1 - p
    return ProbabilityTable(axes=tuple(names) + ("y",), probs=probs,
                            conditional=True)


def snmm_past_joint(spec: SnmmSpec) -> ProbabilityTable:
    """Joint law of (l1, a1, ..., lT, aT) from the declared past models."""
    T = spec.T
    names = []
    for t in range(1, T + 1):
        names += [f"l{t}", f"a{t}"]
    probs = np.zeros([2] * (2 * T))
    for combo in itertools.product((0.0, 1.0), repeat=2 * T):
        h = dict(zip(names, combo))
        p = 1.0
        for t in range(1, T + 1):
            hl = {k: h[k] for k in names[: 2 * (t - 1)]}
            pl = float(spec.p_l[t - 1].eval(hl))
            p *= pl if h[f"l{t}"] == 1 else 1 - pl
            ha = {**hl, f"l{t}": h[f"l{t}"]}
            pa = float(spec.p_a[t - 1].eval(ha))
            p *= pa if h[f"a{t}"] == 1 else 1 - pa
        probs[tuple(int(v) for v in combo)] = p
    return ProbabilityTable(axes=tuple(names), probs=probs)


# ---------------------------------------------------------------------------
# nested (recursive) frugal construction


def nested_frugal_build(stages) -> dict:
    """Joint over interleaved (z_i, x_i, y_i) binary chains, stage by stage.

    Each stage is a mapping with callables of the history dict:
      * ``z``: P(z_i = 1 | history);
      * ``x``: P(x_i = 1 | history, z_i) — the observational propensity;
      * ``margin``: the stage's causal outcome margin P*(y_i = 1 | history,
        x_i), averaging z_i over its conditional given the history;
      * ``logor``: conditional log odds ratio of (y_i, z_i).
    Returns {'joint': {history tuple: prob}, 'names': [...]} with the full
    observational law; each stage's margin is recoverable from it.
    """
    joint = {(): 1.0}
    names: list[str] = []
    for i, st in enumerate(stages, start=1):
        names += [f"z{i}", f"x{i}", f"y{i}"]
        nxt: dict[tuple, float] = {}
        for hist, ph in joint.items():
            h = dict(zip(names[: len(hist)], hist))
            pz = float(st["z"](h))
            if not 0 < pz < 1:
                raise ModelError(f"stage {i}: covariate probability {pz}")
            for z in (0.0, 1.0):
                hz = {**h, f"z{i}": z}
                px = float(st["x"](hz))
                for x in (0.0, 1.0):
                    hx = {**hz, f"x{i}": x}
                    pm = float(st["margin"](hx))
                    psi = float(np.exp(st["logor"](hx)))
                    if not 0 < pm < 1:
                        raise ModelError(f"stage {i}: margin {pm} infeasible")
                    p11, p10, p01, p00 = joint_cells(pm, pz, psi)
                    py = p11 / (p11 + p01) if z == 1 else p10 / (p10 + p00)
                    w = ph * (pz if z == 1 else 1 - pz) * (px if x == 1 else 1 - px)
                    for y in (0.0, 1.0):
                        nxt[hist + (z, x, y)] = w * (py if y == 1 else 1 - py)
        joint = nxt
    return {"joint": joint, "names": names}
