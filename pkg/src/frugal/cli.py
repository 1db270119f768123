"""Command-line interface: simulate, fit, and reproduce published results.

Exit codes: 0 success, 1 usage error, 2 model/config error, 3 numeric
failure (including reproduction targets that miss their tolerance).
Every command that writes output also writes a JSON manifest sufficient
to re-run it bit-identically (see the ``rerun`` subcommand).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from frugal import __version__, examples
from frugal.construct import discrete_joint, gaussian_joint
from frugal.fit import (
    dr_fit,
    ipw_fit,
    mle_fit,
    outcome_regression_fit,
    param_map,
    run_study,
    sandwich_cov,
)
from frugal.model import FrugalModel, ModelError, logit, parse_model_config
from frugal.sample import Dataset, rejection_resample, sample_causal, sample_iv
from frugal.sequential import (
    gformula_survival,
    snmm_joint,
    survival_ipw_fit,
    survival_simulate,
    survival_theta_from_psi,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MODEL = 2
EXIT_NUMERIC = 3


@dataclass
class RunManifest:
    """Everything needed to re-run a command and get identical bytes."""

    command: str
    argv: list[str]
    config: str | None
    seed: int
    outputs: list[str] = field(default_factory=list)
    version: str = __version__
    wall_clock: float = 0.0

    def write(self, path: str) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)  # atomic on POSIX


def _manifest_path(out: str) -> str:
    return out + ".manifest.json"


def _load_model(path: str) -> FrugalModel:
    with open(path) as fh:
        return parse_model_config(fh.read())


# ---------------------------------------------------------------------------
# terms derived from a model, for the regression-style estimators


def msm_terms_of(m: FrugalModel):
    return tuple(names for names, _ in m.outcome.predictor.terms)


def treat_terms_of(m: FrugalModel) -> dict:
    treatments = {t.name for t in m.treatments}
    out = {}
    for v in m.past:
        if not v.treatment:
            continue
        den = tuple(names for names, _ in v.predictor.terms)
        num = tuple(t for t in den if set(t) <= treatments)
        out[v.name] = (num, den)
    return out


# ---------------------------------------------------------------------------
# simulate / fit / rerun


def cmd_simulate(args) -> int:
    t0 = time.monotonic()
    m = _load_model(args.config)
    if args.n == 0:
        names = [v.name for v in m.past] + [m.outcome.name]
        data = Dataset({name: np.empty(0) for name in names})
    elif args.world == "causal":
        data = sample_causal(m, args.n, seed=args.seed, threads=args.threads)
    else:
        data = rejection_resample(m, args.n, seed=args.seed, threads=args.threads)
    data.to_csv(args.out)
    man = RunManifest(
        command="simulate",
        argv=list(args.raw_argv),
        config=args.config,
        seed=args.seed,
        outputs=[args.out],
        wall_clock=time.monotonic() - t0,
    )
    man.write(_manifest_path(args.out))
    print(f"wrote {len(data)} rows to {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    t0 = time.monotonic()
    m = _load_model(args.config)
    frame = pd.read_csv(args.data)
    declared = [v.name for v in m.past] + [m.outcome.name]
    missing = sorted(set(declared) - set(frame.columns))
    extra = sorted(set(frame.columns) - set(declared))
    if missing:
        raise ModelError(
            f"data columns do not match config: missing {missing}, extra {extra}"
        )
    data = Dataset.from_frame(frame[declared])
    family = "exponential" if m.outcome.family == "exponential" else "gaussian"
    if args.method == "mle":
        fr = mle_fit(m, data)
        try:
            params = param_map(m)
            theta_u = _unconstrained(m, fr)
            sw = sandwich_cov(m, theta_u, data)
            jac = np.array([
                v if p.transform == "log" else 1.0
                for p, v in zip(params, fr.estimates)
            ])
            fr.diagnostics["sandwich_se"] = list(
                np.sqrt(np.clip(np.diag(sw), 0, None)) * np.abs(jac)
            )
        except ModelError:
            pass
    elif args.method == "ipw":
        fr = ipw_fit(msm_terms_of(m), treat_terms_of(m), data,
                     outcome=m.outcome.name, family=family)
    elif args.method == "dr":
        fr = dr_fit(msm_terms_of(m), treat_terms_of(m), data,
                    outcome=m.outcome.name,
                    treatments=tuple(t.name for t in m.treatments))
    else:
        fr = outcome_regression_fit(msm_terms_of(m), data,
                                    outcome=m.outcome.name)
    report = fr.to_frame()
    if args.out:
        report.to_csv(args.out, index=False)
        man = RunManifest(
            command="fit", argv=list(args.raw_argv), config=args.config,
            seed=args.seed, outputs=[args.out],
            wall_clock=time.monotonic() - t0,
        )
        man.write(_manifest_path(args.out))
    print(report.to_string(index=False))
    return EXIT_OK


def _unconstrained(m: FrugalModel, fr):
    """Unconstrained-scale parameter vector matching a FitResult's order."""
    params = param_map(m)
    return np.array(
        [p.to_unconstrained(v) for p, v in zip(params, fr.estimates)]
    )


def cmd_rerun(args) -> int:
    with open(args.manifest) as fh:
        man = json.load(fh)
    return main(man["argv"])


# ---------------------------------------------------------------------------
# reproduction targets


def _report(rows, columns) -> bool:
    """Print a comparison table; return overall pass/fail."""
    frame = pd.DataFrame(rows, columns=columns)
    print(frame.to_string(index=False))
    ok = bool(frame["match"].all())
    print("PASS" if ok else "FAIL")
    return ok


def _target_example_1_2(args) -> bool:
    g = examples.gaussian_example()
    cov = gaussian_joint(g)
    t2, u2, r = g.tau2, g.upsilon2, g.rho
    b, s2, a = g.beta, g.sigma2, g.alpha
    tu = np.sqrt(t2 * u2)
    expected = np.array([
        [t2, r * tu, a * t2 + b * r * tu],
        [r * tu, u2, b * u2 + a * r * tu],
        [a * t2 + b * r * tu, b * u2 + a * r * tu,
         s2 + b**2 * u2 + 2 * r * tu * a * b],
    ])
    labels = ("z", "x", "y")
    rows = []
    for i in range(3):
        for j in range(i, 3):
            rows.append((f"cov({labels[i]},{labels[j]})", cov[i, j],
                         expected[i, j],
                         abs(cov[i, j] - expected[i, j]) <= 1e-12))
    return _report(rows, ["entry", "computed", "published", "match"])


def _target_example_4_1(args) -> bool:
    m = examples.binary_or_model()
    joint = discrete_joint(m)
    cond = joint.cond_outcome  # axes (a, b, y)
    grid = {}
    for a in (0, 1):
        for b in (0, 1):
            grid[(a, b)] = float(logit(cond.probs[a, b, 1]))
    c0 = grid[(0, 0)]
    ca = grid[(1, 0)] - c0
    cb = grid[(0, 1)] - c0
    cab = grid[(1, 1)] - c0 - ca - cb
    computed = (c0, ca, cb, cab)
    rows = [
        (name, comp, pub, abs(comp - pub) <= 5e-4)
        for name, comp, pub in zip(
            ("intercept", "a", "b", "a:b"), computed,
            examples.BINARY_OR_OBS_LOGIT,
        )
    ]
    return _report(rows, ["coefficient", "computed", "published", "match"])


def _target_example_r4_3(args) -> bool:
    n = args.n or 100_000
    m = examples.copula_msm_model()
    data = rejection_resample(m, n, seed=args.seed, threads=args.threads)
    fr = ipw_fit(examples.MSM_TERMS, examples.MSM_TREAT_TERMS, data)
    rows = []
    for name, truth in examples.COPULA_MSM_TRUTH.items():
        est, se = fr.coef(name), fr.coef_se(name)
        pub = examples.COPULA_MSM_IPW_PUBLISHED[name]
        rows.append((name, est, se, pub[0], pub[1], truth,
                     abs(est - truth) <= 4 * se))
    return _report(rows, ["coefficient", "estimate", "se", "published",
                          "published_se", "truth", "match"])


def _target_table_1(args) -> bool:
    N = args.N or 200
    n = args.n or 250
    report = run_study(examples.msm_study_scenario(), N=N, n=n,
                       seed=args.seed, threads=args.threads)
    rows = []
    ok_all = True
    for meth in ("or", "ipw", "dr", "mle"):
        for p in ("intercept", "a", "b", "a:b"):
            r = report.row(meth, p)
            pub = examples.STUDY_TABLE_PUBLISHED[meth][p]
            if meth == "or":
                ok = (0.10 <= r.bias <= 0.20) if p == "b" else True
            else:
                ok = (abs(r.bias) < 0.03 and 0.84 <= r.cover90 <= 0.96
                      and 0.8 <= r.sec <= 1.2)
            ok_all = ok_all and ok
            rows.append((meth, p, r.bias, r.cover90, r.sec,
                         pub[0], pub[1], pub[2], ok))
    frame = pd.DataFrame(rows, columns=[
        "method", "parameter", "bias", "cover90", "sec",
        "pub_bias", "pub_cover90", "pub_sec", "match"])
    if args.out:
        frame.to_csv(args.out, index=False)
    print(frame.to_string(index=False))
    print(f"failures: {report.n_fail}")
    print("PASS" if ok_all else "FAIL")
    return ok_all


def _target_appendix_d(args) -> bool:
    n = args.n or 10_000
    m = examples.copula_msm_model()
    data = rejection_resample(m, n, seed=args.seed, threads=args.threads)
    ipw = ipw_fit(examples.MSM_TERMS, examples.MSM_TREAT_TERMS, data)
    mle = mle_fit(m, data)
    mle_of = examples.msm_study_scenario()["mle_param_of"]
    rows = []
    ok_all = True
    for name, truth in examples.COPULA_MSM_TRUTH.items():
        ei, si = ipw.coef(name), ipw.coef_se(name)
        em, sm = mle.coef(mle_of[name]), mle.coef_se(mle_of[name])
        ok = sm <= si and abs(em - truth) <= 3 * sm and abs(ei - truth) <= 3 * si
        ok_all = ok_all and ok
        rows.append((name, ei, si, em, sm, truth, ok))
    return _report(rows, ["coefficient", "ipw_est", "ipw_se", "mle_est",
                          "mle_se", "truth", "match"])


def _snmm_target(spec, published, cols) -> bool:
    table = snmm_joint(spec)
    rows = []
    for combo, pub in published.items():
        idx = dict(zip(cols, combo))
        sel = tuple(idx.get(ax, 1) for ax in table.axes[:-1]) + (1,)
        val = float(table.probs[sel])
        rows.append(tuple(combo) + (val, pub, abs(round(val, 3) - pub) <= 5e-4))
    return _report(rows, list(cols) + ["computed", "published", "match"])


def _target_snmm_table_3(args) -> bool:
    return _snmm_target(examples.snmm_example_single_period(),
                        examples.SNMM_TABLE_SINGLE, ("a1", "l2", "a2"))


def _target_snmm_table_4(args) -> bool:
    return _snmm_target(examples.snmm_example_two_period(),
                        examples.SNMM_TABLE_TWO, ("l1", "l2", "a1", "a2"))


def _target_appendix_f(args) -> bool:
    n = args.n or 20_000
    N = args.N or 20
    rows = []
    ok_all = True
    for row in examples.survival_rows()[:2] if N <= 20 else examples.survival_rows():
        spec = row["spec"]
        ta0, ta1, _ = survival_theta_from_psi(spec)
        haz0 = gformula_survival(spec, ta0, ta1, [0, 0])
        haz1 = gformula_survival(spec, ta0, ta1, [1, 1])
        resid = abs(np.log(haz1[0] / haz0[0]) - spec.psi0)
        est = []
        for rep in range(N):
            data = survival_simulate(spec, n, seed=args.seed * 7919 + rep)
            psi_hat, _ = survival_ipw_fit(data, spec.T)
            est.append(psi_hat[0])
        bias = float(np.mean(est) - spec.psi0)
        mc_se = float(np.std(est) / np.sqrt(len(est)))
        ok = resid < 1e-8 and abs(bias) < max(0.02, 4 * mc_se)
        ok_all = ok_all and ok
        rows.append((row["beta1"], row["alpha0"], spec.psi0, resid, bias,
                     mc_se, ok))
    return _report(rows, ["beta1", "alpha0", "psi0", "solver_resid",
                          "ipw_bias", "mc_se", "match"])


def _target_vine_c1(args) -> bool:
    n = args.n or 10_000
    m = examples.vine_latent_model()
    data = rejection_resample(m, n, seed=args.seed, threads=args.threads)
    # the hidden variable is not observed by the analyst
    observed = Dataset({k: v for k, v in data.columns.items() if k != "u"})
    fr = ipw_fit(examples.MSM_TERMS, examples.MSM_TREAT_TERMS, observed,
                 family="exponential")
    rows = []
    for name, truth in examples.VINE_MSM_TRUTH.items():
        est, se = fr.coef(name), fr.coef_se(name)
        pub = examples.VINE_IPW_PUBLISHED[name]
        rows.append((name, est, se, pub[0], pub[1], truth,
                     abs(est - truth) <= 4 * se))
    return _report(rows, ["coefficient", "estimate", "se", "published",
                          "published_se", "truth", "match"])


def _target_iv_g(args) -> bool:
    n = args.n or 200_000
    iv = examples.iv_gaussian_model()
    data = sample_iv(iv, n, seed=args.seed)
    z, x, y = data["z"], data["x"], data["y"]
    czy = np.cov(z, y)[0, 1]
    czx = np.cov(z, x)[0, 1]
    ratio = czy / czx
    # delta-method Monte Carlo SE of the covariance ratio via the
    # per-observation influence function of czy/czx
    infl = ((z - z.mean()) * ((y - y.mean()) - ratio * (x - x.mean()))) / czx
    mc_se = float(np.std(infl) / np.sqrt(n))
    ok = abs(ratio - examples.IV_BETA) <= 4 * mc_se
    rows = [("cov(z,y)/cov(z,x)", ratio, examples.IV_BETA, mc_se, ok)]
    return _report(rows, ["quantity", "computed", "truth", "mc_se", "match"])


TARGETS = {
    "example-1.2": _target_example_1_2,
    "example-4.1": _target_example_4_1,
    "example-r4.3": _target_example_r4_3,
    "table-1": _target_table_1,
    "appendix-d": _target_appendix_d,
    "snmm-table-3": _target_snmm_table_3,
    "snmm-table-4": _target_snmm_table_4,
    "appendix-f": _target_appendix_f,
    "vine-c1": _target_vine_c1,
    "iv-g": _target_iv_g,
}


def cmd_reproduce(args) -> int:
    if args.target not in TARGETS:
        print(f"unknown target {args.target!r}; available targets:",
              file=sys.stderr)
        for t in TARGETS:
            print(f"  {t}", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.monotonic()
    ok = TARGETS[args.target](args)
    if args.out:
        man = RunManifest(
            command="reproduce", argv=list(args.raw_argv), config=None,
            seed=args.seed, outputs=[args.out],
            wall_clock=time.monotonic() - t0,
        )
        man.write(_manifest_path(args.out))
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="frugal",
        description="Simulate from and fit marginally parameterized causal "
                    "models; reproduce published example values.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--n", type=int, default=None)
        sp.add_argument("--out", type=str, default=None)
        sp.add_argument("--threads", type=int, default=1)

    sim = sub.add_parser("simulate", help="sample a dataset from a config")
    sim.add_argument("config")
    sim.add_argument("--world", choices=("observational", "causal"),
                     default="observational")
    common(sim)
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="fit a model to a CSV dataset")
    fit.add_argument("config")
    fit.add_argument("data")
    fit.add_argument("--method", choices=("mle", "ipw", "dr", "or"),
                     default="mle")
    common(fit)
    fit.set_defaults(func=cmd_fit)

    rep = sub.add_parser("reproduce", help="recompute a published quantity")
    rep.add_argument("target")
    rep.add_argument("--N", type=int, default=None,
                     help="number of study replicates (study targets)")
    common(rep)
    rep.set_defaults(func=cmd_reproduce)

    rr = sub.add_parser("rerun", help="re-run a command from its manifest")
    rr.add_argument("manifest")
    rr.set_defaults(func=cmd_rerun)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    args.raw_argv = argv
    if getattr(args, "n", None) is not None and args.n < 0:
        print("--n must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "simulate":
        if args.n is None:
            args.n = 1000
        if args.out is None:
            print("simulate requires --out", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except (ModelError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except (np.linalg.LinAlgError, FloatingPointError, ValueError,
            RuntimeError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
