"""Simulation: direct causal-world sampling and exact rejection resampling.

Sampling proceeds on the scale of quantiles: dependence specs produce
uniform quantile vectors, which inverse conditional cdfs turn into values.
The observational world is reached by a binned rejection step that
reweights only the (covariate, treatment) margin, carrying each outcome
with its row.
"""

from __future__ import annotations

import hashlib
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from frugal.dependence import (
    CopulaSpec,
    OddsRatioSpec,
    VineSpec,
    cond_prob_from_margin_and_or,
    copula_h_inv,
    vine_sample_arrays,
)
from frugal.model import FrugalModel, ModelError

_CHUNK = 250_000
ACCEPTANCE_FLOOR = 1e-4


# ---------------------------------------------------------------------------
# dataset plumbing


@dataclass
class Dataset:
    """Named, equal-length value columns."""

    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ModelError("unequal column lengths")
        self.columns = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}

    def __len__(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __getitem__(self, name):
        return self.columns[name]

    @property
    def names(self):
        return tuple(self.columns)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.columns)

    def take(self, idx) -> "Dataset":
        return Dataset({k: v[idx] for k, v in self.columns.items()})

    def to_csv(self, path):
        """Write CSV with round-trip (repr) float formatting."""
        with open(path, "w") as fh:
            fh.write(",".join(self.names) + "\n")
            cols = [self.columns[n] for n in self.names]
            for i in range(len(self)):
                fh.write(",".join(repr(float(c[i])) for c in cols) + "\n")

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "Dataset":
        return cls({c: df[c].to_numpy(dtype=float) for c in df.columns})


# ---------------------------------------------------------------------------
# keyed RNG streams: one counter-based stream per (seed, chunk, variable),
# so adding or reordering a column never perturbs the draws of another


def _stream(seed: int, chunk: int, name: str) -> np.random.Generator:
    digest = hashlib.blake2b(
        f"{seed}|{chunk}|{name}".encode(), digest_size=16
    ).digest()
    return np.random.Generator(np.random.Philox(int.from_bytes(digest, "little")))


# ---------------------------------------------------------------------------
# causal-world sampling


def _dep_quantiles(m: FrugalModel, row: dict, n: int, seed: int, chunk: int):
    """Quantiles for the dependence-linked variables, keyed by name."""
    dep = m.dependence
    out_name = m.outcome.name
    if isinstance(dep, OddsRatioSpec):
        return {}
    if isinstance(dep, CopulaSpec):
        paired = dep.with_ or m.covariates[0].name
        theta = dep.param(row)
        u_w = _stream(seed, chunk, paired).random(n)
        u_y = copula_h_inv(dep.family, _stream(seed, chunk, out_name).random(n), u_w, theta)
        return {paired: u_w, out_name: u_y}
    if isinstance(dep, VineSpec):
        fams, params = dep.tree_params(row)
        w = np.column_stack(
            [_stream(seed, chunk, name).random(n) for name in dep.order]
        )
        u = vine_sample_arrays(fams, params, w)
        return dict(zip(dep.order, u.T))
    raise ModelError(type(dep).__name__)


def _value_from_quantile(v, u, row):
    if v.family == "bernoulli":
        return (u > 1.0 - v._param(row)).astype(float)
    return v.quantile(u, row)


def _sample_chunk_causal(m: FrugalModel, n: int, seed: int, chunk: int) -> dict:
    row: dict = {}
    # treatments first: dummies are marginal, and dependence parameters and
    # covariate conditionals may reference them
    for t in m.treatments:
        row[t.name] = m.dummy.get(t.name).sample(_stream(seed, chunk, t.name), n)
    uq = _dep_quantiles(m, row, n, seed, chunk)
    for v in m.past:
        if v.treatment:
            continue
        u = uq.get(v.name)
        if u is None:
            u = _stream(seed, chunk, v.name).random(n)
        row[v.name] = _value_from_quantile(v, u, row)
    out = m.outcome
    if isinstance(m.dependence, OddsRatioSpec):
        w = m.dependence.with_ or m.covariates[0].name
        psi = m.dependence.odds_ratio(row)
        c0, c1 = cond_prob_from_margin_and_or(
            out._param(row), m.var(w)._param(row), psi
        )
        p1 = np.where(row[w] > 0.5, c1, c0)
        row[out.name] = (_stream(seed, chunk, out.name).random(n) < p1).astype(float)
    else:
        row[out.name] = _value_from_quantile(out, uq[out.name], row)
    return row


def _sample_chunk_past_obs(m: FrugalModel, n: int, seed: int, chunk: int) -> dict:
    """Past only, from the observational law (treatments via their predictors)."""
    row: dict = {}
    for v in m.past:
        u = _stream(seed, chunk, v.name).random(n)
        row[v.name] = _value_from_quantile(v, u, row) if v.family != "categorical" else v.sample(
            _stream(seed, chunk, v.name), row, n
        )
    return row


def _chunked(m, n, seed, worker, threads=1, chunk_tag=0):
    sizes = []
    left = n
    while left > 0:
        sizes.append(min(_CHUNK, left))
        left -= sizes[-1]
    ids = [chunk_tag * 10_000 + i for i in range(len(sizes))]
    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda t: worker(m, t[0], seed, t[1]), zip(sizes, ids)))
    else:
        parts = [worker(m, sz, seed, cid) for sz, cid in zip(sizes, ids)]
    return {
        k: np.concatenate([p[k] for p in parts]) for k in parts[0]
    }


def _declared_order(m: FrugalModel, cols: dict) -> dict:
    """Column order follows the model declaration, not sampling order."""
    names = [v.name for v in m.past] + [m.outcome.name]
    return {name: cols[name] for name in names}


def sample_causal(m: FrugalModel, n: int, seed: int = 0, threads: int = 1) -> Dataset:
    """Draw n rows from the interventional joint p*_{ZXY}."""
    if n < 1:
        raise ModelError("n must be >= 1")
    return Dataset(_declared_order(m, _chunked(m, n, seed, _sample_chunk_causal, threads)))


# ---------------------------------------------------------------------------
# bins and envelopes


@dataclass
class BinPartition:
    """Partition of the confounder space with per-bin rejection envelopes."""

    names: tuple[str, ...]  # covariates the treatment ratio depends on
    discrete: bool
    atoms: list | None = None  # discrete: list of value tuples
    edges: list | None = None  # continuous: per-dim edge arrays
    envelopes: np.ndarray | None = None  # M_i per bin
    counts: np.ndarray | None = None  # per-bin target counts

    def assign(self, data: dict) -> np.ndarray:
        """Bin index for each row; -1 if outside every bin."""
        n = len(next(iter(data.values()))) if self.names else len(
            data[next(iter(data))]
        )
        if not self.names:
            return np.zeros(n, dtype=int)
        if self.discrete:
            keys = list(zip(*(data[nm] for nm in self.names)))
            lookup = {a: i for i, a in enumerate(self.atoms)}
            return np.array([lookup.get(k, -1) for k in keys], dtype=int)
        # continuous: product of per-dim digitize
        idx = np.zeros(n, dtype=int)
        mult = 1
        for d, nm in enumerate(self.names):
            e = self.edges[d]
            j = np.clip(np.digitize(data[nm], e[1:-1]), 0, len(e) - 2)
            idx = idx + j * mult
            mult *= len(e) - 1
        return idx

    @property
    def n_bins(self):
        if not self.names:
            return 1
        if self.discrete:
            return len(self.atoms)
        out = 1
        for e in self.edges:
            out *= len(e) - 1
        return out


def _ratio_dependencies(m: FrugalModel):
    """Covariates the density ratio p_ZX/p*_ZX depends on."""
    cov_names = {v.name for v in m.covariates}
    deps = []
    for t in m.treatments:
        for nm in t.predictor.variables():
            if nm in cov_names and nm not in deps:
                deps.append(nm)
    return tuple(deps)


def _treatment_grid(m: FrugalModel):
    grids = []
    for t in m.treatments:
        if t.family == "bernoulli":
            grids.append(np.array([0.0, 1.0]))
        else:
            grids.append(m.dummy.get(t.name).grid(17))
    return [dict(zip([t.name for t in m.treatments], combo))
            for combo in itertools.product(*grids)]


def _ratio(m: FrugalModel, row: dict):
    r = 1.0
    for t in m.treatments:
        r = r * t.density(row[t.name], row) / m.dummy.get(t.name).density(row[t.name])
    return r


def build_bins(z_samples: dict | Dataset, scheme: dict | None, m: FrugalModel) -> BinPartition:
    """Partition confounder space and bound the density ratio per bin.

    Discrete confounders get one bin per atom with the exact ratio maximum
    over the treatment grid; continuous ones get equal-count quantile bins
    with a gridded maximum inflated by 10%.
    """
    if isinstance(z_samples, Dataset):
        z_samples = dict(z_samples.columns)
    scheme = scheme or {}
    names = _ratio_dependencies(m)
    x_grid = _treatment_grid(m)
    if not names:
        env = max(float(np.max(_ratio(m, dict(xrow)))) for xrow in x_grid)
        return BinPartition(names=(), discrete=True, atoms=[()],
                            envelopes=np.array([env]))
    vars_ = [m.var(nm) for nm in names]
    discrete = all(v.family in ("bernoulli", "categorical") for v in vars_)
    if discrete:
        atoms = sorted({tuple(float(z_samples[nm][i]) for nm in names)
                        for i in range(len(z_samples[names[0]]))})
        envs = []
        for atom in atoms:
            zrow = dict(zip(names, atom))
            mx = 0.0
            for xrow in x_grid:
                mx = max(mx, float(np.max(_ratio(m, {**zrow, **xrow}))))
            envs.append(mx)
        part = BinPartition(names=names, discrete=True, atoms=atoms,
                            envelopes=np.array(envs))
    else:
        if any(v.family in ("bernoulli", "categorical") for v in vars_):
            raise ModelError("mixed discrete/continuous confounder bins unsupported")
        k = len(names)
        n_default = 20 if k == 1 else int(np.ceil(20 ** (1.0 / k)))
        nb = int(scheme.get("bins", n_default))
        edges = []
        for nm in names:
            qs = np.quantile(z_samples[nm], np.linspace(0, 1, nb + 1))
            qs[0], qs[-1] = -np.inf, np.inf
            edges.append(qs)
        part = BinPartition(names=names, discrete=False, edges=edges)
        envs = np.zeros(part.n_bins)
        # grid within each bin: 256 points per dim, spread by quantiles
        pts_per = max(2, int(round(256 ** (1.0 / k))))
        grids = []
        for d, nm in enumerate(names):
            col = np.sort(z_samples[nm])
            gp = []
            for b in range(nb):
                lo = col[int(b * len(col) / nb)]
                hi = col[min(int((b + 1) * len(col) / nb), len(col) - 1)]
                gp.append(np.linspace(lo, hi, pts_per))
            grids.append(gp)
        for flat, combo in enumerate(itertools.product(*[range(nb)] * k)):
            zpts = np.meshgrid(*[grids[d][combo[d]] for d in range(k)], indexing="ij")
            zrow = {nm: zpts[d].ravel() for d, nm in enumerate(names)}
            mx = 0.0
            for xrow in x_grid:
                xr = {nm: np.full(zpts[0].size, v) for nm, v in xrow.items()}
                mx = max(mx, float(np.max(_ratio(m, {**zrow, **xr}))))
            # map combo to the same flat index `assign` produces
            idx = 0
            mult = 1
            for d in range(k):
                idx += combo[d] * mult
                mult *= nb
            envs[idx] = 1.10 * mx
        part.envelopes = envs
    if not np.all(np.isfinite(part.envelopes)) or np.any(part.envelopes > 1e12):
        bad = int(np.argmax(part.envelopes))
        raise ModelError(
            f"unbounded density ratio in bin {bad}: the dummy treatment law "
            "is too light-tailed for this model"
        )
    return part


# ---------------------------------------------------------------------------
# rejection resampling


def rejection_resample(m: FrugalModel, n_target: int, seed: int = 0,
                       scheme: dict | None = None, threads: int = 1) -> Dataset:
    """Draw n_target rows from the observational joint by binned rejection.

    Bin quotas come from a direct draw of the past under its observational
    law, so across bins the confounder margin is exact; within each bin,
    causal-world proposals are accepted with probability ratio/envelope,
    which reweights only the (z, x) margin and carries y with its row.
    When the two worlds agree the first proposal batch is returned intact.
    """
    past_obs = _chunked(m, n_target, seed, _sample_chunk_past_obs, threads,
                        chunk_tag=1)
    bins = build_bins(past_obs, scheme, m)
    r_obs = np.asarray(_ratio(m, past_obs), dtype=float)
    if np.max(bins.envelopes) <= 1.0 + 1e-9 and np.min(r_obs) >= 1.0 - 1e-9:
        # the two worlds share their (z, x) margin: every proposal would be
        # accepted, so return the causal draw itself
        return sample_causal(m, n_target, seed=seed, threads=threads)
    quota = np.bincount(bins.assign(past_obs), minlength=bins.n_bins)

    out_parts: list[dict] = []
    filled = np.zeros(bins.n_bins, dtype=int)
    total_prop = 0
    total_acc = 0
    batch = 0
    order_base = 0
    while np.any(filled < quota):
        nb = n_target if batch == 0 else max(n_target // 2, 10_000)
        rows = _chunked(m, nb, seed if batch == 0 else seed, _sample_chunk_causal,
                        threads, chunk_tag=0 if batch == 0 else 100 + batch)
        b = bins.assign(rows)
        ok = b >= 0
        env = bins.envelopes[np.clip(b, 0, None)]
        r = np.asarray(_ratio(m, rows), dtype=float)
        u = _stream(seed, 1_000_000 + batch, "__accept__").random(nb)
        acc = ok & (u * env < r)
        total_prop += nb
        total_acc += int(acc.sum())
        # fill bin quotas in original row order
        need = quota - filled
        keep = np.zeros(nb, dtype=bool)
        for bi in np.unique(b[acc]):
            if need[bi] <= 0:
                continue
            pos = np.flatnonzero(acc & (b == bi))[: need[bi]]
            keep[pos] = True
            filled[bi] += len(pos)
        idx = np.flatnonzero(keep)
        part = {k: v[idx] for k, v in rows.items()}
        part["__order__"] = order_base + idx.astype(float)
        out_parts.append(part)
        order_base += nb
        batch += 1
        if total_prop >= 10 * n_target and total_acc / max(total_prop, 1) < ACCEPTANCE_FLOOR:
            raise ModelError(
                "rejection acceptance rate below floor; choose a dummy "
                "treatment law closer to the observational propensity"
            )
        if batch > 1000:
            raise ModelError("rejection failed to fill bin quotas")
    merged = {k: np.concatenate([p[k] for p in out_parts]) for k in out_parts[0]}
    order = np.argsort(merged.pop("__order__"), kind="stable")
    return Dataset(_declared_order(m, {k: v[order] for k, v in merged.items()}))


# ---------------------------------------------------------------------------
# instrumental-variable simulation


@dataclass(frozen=True)
class IvSpec:
    """Model over (confounder U, instrument Z, treatment X, outcome Y).

    Structural constraints make Z an instrument: U and Z are generated
    independently, Z enters only the treatment predictor, and the
    outcome-dependence ties Y to U (never to Z) given X.
    """

    model: FrugalModel
    u_name: str = "u"
    z_name: str = "z"

    def __post_init__(self):
        m = self.model
        u, z = self.u_name, self.z_name
        if m.var(z).predictor.variables():
            raise ModelError("instrument must be exogenous (no predictors)")
        if u in m.var(z).predictor.variables() or z in m.var(u).predictor.variables():
            raise ModelError("confounder and instrument must be independent")
        for t in m.treatments:
            if z not in t.predictor.variables():
                raise ModelError("instrument must enter the treatment predictor")
        dep = m.dependence
        paired = getattr(dep, "with_", None)
        if paired != u:
            raise ModelError("outcome dependence must pair with the confounder")
        pred = dep.param_predictor if isinstance(dep, CopulaSpec) else None
        if pred is not None and z in pred.variables():
            raise ModelError("outcome dependence may not reference the instrument")


def sample_iv(spec: IvSpec, n: int, seed: int = 0, threads: int = 1) -> Dataset:
    """Simulate (U, Z, X, Y) with Y's causal margin given X as specified."""
    return rejection_resample(spec.model, n, seed=seed, threads=threads)
