"""Tetrad conditional logit: coefficients without sender/receiver effects.

With per-vertex sender and receiver propensities in the link model, the
likelihood of l following j, conditioned jointly on the three events

    W_lj + W_lk = 1,   W_ij + W_ik = 1,   W_lj + W_ij = 1

reduces to a logistic law in the double-difference regressor
z = (r_lj - r_lk) - (r_ij - r_ik): every propensity term cancels exactly.
Estimation therefore touches only z and the conditional outcome; the
propensities are simulation inputs (FixedEffects), never estimator inputs.

Columns of z that are identically zero (anything depending on one endpoint
only, and the intercept) carry no information and are reported as
unidentified rather than fitted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import (
    ConfigError,
    DomainError,
    EmptyTetradError,
    IdentificationError,
    NumericalError,
    OptimizationError,
)
from .estimator import FitResult, fit_newton
from .features import FeatureContext
from .graph import DirectedGraph

DEFAULT_BUDGET = 2_000_000
EXHAUSTIVE_LIMIT = 60


@dataclass(frozen=True)
class FixedEffects:
    """Per-vertex sender/receiver propensities. Simulation-side only."""

    alpha_out: np.ndarray
    alpha_in: np.ndarray


@dataclass
class TetradSample:
    i: int
    j: int
    k: int
    l: int
    z: np.ndarray
    y: int
    weight: float = 1.0


class TetradSet:
    """Qualifying tetrads in columnar form: quads (i,j,k,l), z rows, outcomes."""

    def __init__(self, quads, z, y, names=()):
        self.quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
        self.z = np.asarray(z, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.names = tuple(names)

    def __len__(self):
        return self.quads.shape[0]

    def samples(self):
        for r in range(len(self)):
            i, j, k, l = (int(v) for v in self.quads[r])
            yield TetradSample(i=i, j=j, k=k, l=l, z=self.z[r].copy(), y=int(self.y[r]))

    def codes(self, n):
        q = self.quads
        return ((q[:, 0] * n + q[:, 1]) * n + q[:, 2]) * n + q[:, 3]


def conditional_prob(z, beta):
    """P(W_lj = 1 | conditioning events) = logistic(z . beta)."""
    z = np.asarray(z, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    t = z @ beta
    out = expit(t)
    if np.ndim(out) == 0:
        return float(out)
    return out


def _double_difference(ctx: FeatureContext, i, j, k, l):
    """z rows for quad arrays; exact zeros wherever effects would cancel."""
    r_lj = ctx.design_pairs(l, j)
    r_lk = ctx.design_pairs(l, k)
    r_ij = ctx.design_pairs(i, j)
    r_ik = ctx.design_pairs(i, k)
    return (r_lj - r_lk) - (r_ij - r_ik)


def _exhaustive_quads(W, budget, seed):
    """All ordered qualifying tetrads, grouped by the receiver pair (j, k).

    For each ordered (j, k): A = senders following j but not k, B = senders
    following k but not j (both excluding j and k). Qualifying tetrads are
    exactly (i in B, j, k, l in A) with outcome 1 and (i in A, j, k, l in B)
    with outcome 0. If more than ``budget`` exist, a seeded uniform
    subsample without replacement is returned.
    """
    n = W.shape[0]
    pairs = []
    counts = []
    for j in range(n):
        for k in range(n):
            if j == k:
                continue
            a_mask = W[:, j] & ~W[:, k]
            b_mask = ~W[:, j] & W[:, k]
            a_mask[j] = a_mask[k] = False
            b_mask[j] = b_mask[k] = False
            A = np.nonzero(a_mask)[0]
            B = np.nonzero(b_mask)[0]
            if A.size and B.size:
                pairs.append((j, k, A, B))
                counts.append(2 * A.size * B.size)
    total = int(sum(counts))
    if total == 0:
        raise EmptyTetradError("no tetrad satisfies the conditioning events")

    if total <= budget:
        wanted = None
    else:
        rng = np.random.default_rng(seed)
        wanted = np.sort(rng.choice(total, size=budget, replace=False))

    quads, ys = [], []
    offset = 0
    for (j, k, A, B), c in zip(pairs, counts):
        half = c // 2
        if wanted is None:
            sel = np.arange(c)
        else:
            lo = np.searchsorted(wanted, offset)
            hi = np.searchsorted(wanted, offset + c)
            sel = wanted[lo:hi] - offset
        if sel.size:
            # First half: l in A, i in B (y = 1); second half mirrored (y = 0).
            first = sel[sel < half]
            second = sel[sel >= half] - half
            if first.size:
                li, ii = np.divmod(first, B.size)
                quads.append(np.column_stack([B[ii], np.full(first.size, j), np.full(first.size, k), A[li]]))
                ys.append(np.ones(first.size))
            if second.size:
                li, ii = np.divmod(second, A.size)
                quads.append(np.column_stack([A[ii], np.full(second.size, j), np.full(second.size, k), B[li]]))
                ys.append(np.zeros(second.size))
        offset += c
    return np.concatenate(quads), np.concatenate(ys)


def _sampled_quads(g: DirectedGraph, budget, seed, max_proposals=None, chunk=1 << 17):
    """Uniform rejection sampling of qualifying ordered tetrads, deduplicated.

    Proposals are uniform over distinct ordered 4-tuples; the first
    conditioning event prunes before the remaining adjacency probes run.
    """
    n = g.n
    if max_proposals is None:
        max_proposals = max(budget * 512, 5_000_000)
    rng = np.random.default_rng(seed)
    accepted = np.zeros(0, dtype=np.int64)
    quads_parts, y_parts = [], []
    proposed = 0
    while accepted.size < budget and proposed < max_proposals:
        draw = rng.integers(0, n, size=(chunk, 4))
        proposed += chunk
        i, j, k, l = draw.T
        distinct = (i != j) & (i != k) & (i != l) & (j != k) & (j != l) & (k != l)
        i, j, k, l = i[distinct], j[distinct], k[distinct], l[distinct]
        w_lj = g.has_edge(l, j)
        w_lk = g.has_edge(l, k)
        keep = w_lj != w_lk
        i, j, k, l, w_lj = i[keep], j[keep], k[keep], l[keep], w_lj[keep]
        if i.size == 0:
            continue
        w_ij = g.has_edge(i, j)
        w_ik = g.has_edge(i, k)
        keep = (w_ij != w_ik) & (w_lj != w_ij)
        i, j, k, l, w_lj = i[keep], j[keep], k[keep], l[keep], w_lj[keep]
        if i.size == 0:
            continue
        codes = ((i * n + j) * n + k) * n + l
        codes, first_idx = np.unique(codes, return_index=True)
        fresh = ~np.isin(codes, accepted)
        codes, first_idx = codes[fresh], first_idx[fresh]
        if codes.size == 0:
            continue
        # Truncate in proposal order, not code order, to stay uniform.
        order = np.argsort(first_idx)
        codes, first_idx = codes[order], first_idx[order]
        room = budget - accepted.size
        if codes.size > room:
            codes, first_idx = codes[:room], first_idx[:room]
        accepted = np.union1d(accepted, codes)
        quads_parts.append(np.column_stack([i[first_idx], j[first_idx], k[first_idx], l[first_idx]]))
        y_parts.append(w_lj[first_idx].astype(np.float64))
    if not quads_parts:
        raise EmptyTetradError(
            f"no qualifying tetrad found in {proposed} uniform proposals; "
            "the graph may be empty, complete, or too sparse")
    return np.concatenate(quads_parts), np.concatenate(y_parts)


def enumerate_tetrads(g: DirectedGraph, ctx: FeatureContext, budget=DEFAULT_BUDGET, seed=0,
                      exhaustive_limit=EXHAUSTIVE_LIMIT) -> TetradSet:
    """Qualifying tetrads with their double-difference regressors.

    Up to ``exhaustive_limit`` vertices every qualifying ordered tetrad is
    enumerated (subsampled only beyond ``budget``); larger graphs use
    uniform rejection sampling of ordered tuples. No tetrad appears twice.
    The outcome is taken from the context's configured network view.
    """
    if g.n < 4:
        raise DomainError("tetrads need at least 4 vertices")
    w_graph = ctx.w_graph
    if g.n <= exhaustive_limit:
        quads, y = _exhaustive_quads(w_graph.dense_adjacency(), budget, seed)
    else:
        quads, y = _sampled_quads(w_graph, budget, seed)
    z = _double_difference(ctx, quads[:, 0], quads[:, 1], quads[:, 2], quads[:, 3])
    return TetradSet(quads=quads, z=z, y=y, names=ctx.manifest.names)


def fit_tetrad(tetrads, tol=1e-10, config_hash="") -> FitResult:
    """Conditional-logit MLE over tetrad samples.

    Only columns with nonzero z-variation are estimable; the rest come back
    as NaN with their names listed in ``unidentified``.
    """
    if isinstance(tetrads, TetradSet):
        z, y, names = tetrads.z, tetrads.y, tetrads.names
    else:
        samples = list(tetrads)
        if not samples:
            raise EmptyTetradError("no tetrad samples")
        z = np.stack([s.z for s in samples])
        y = np.array([s.y for s in samples], dtype=np.float64)
        names = ()
    if z.shape[0] == 0:
        raise EmptyTetradError("no tetrad samples")
    names = names or tuple(f"b{k}" for k in range(z.shape[1]))

    identified = np.abs(z).max(axis=0) > 1e-12
    if not identified.any():
        raise IdentificationError("every double-difference column is zero")
    sub_names = tuple(np.asarray(names)[identified])
    sub = fit_newton(z[:, identified], y, tol=tol, names=sub_names, config_hash=config_hash)

    beta = np.full(len(names), np.nan)
    se = np.full(len(names), np.nan)
    beta[identified] = sub.beta
    se[identified] = sub.se
    return FitResult(
        beta=beta,
        se=se,
        avg_nll=sub.avg_nll,
        n_obs=sub.n_obs,
        converged=sub.converged,
        iterations=sub.iterations,
        config_hash=config_hash,
        names=tuple(names),
        grad_norm=sub.grad_norm,
        unidentified=tuple(np.asarray(names)[~identified]),
    )


@dataclass
class BootstrapResult:
    se: np.ndarray
    betas: np.ndarray  # kept replicates x width, NaN where unidentified
    n_dropped: int
    names: tuple


def _resample_graph(g: DirectedGraph, idx):
    """Induced graph on resampled vertices; same-original clone pairs stay unlinked."""
    idx = np.asarray(idx, dtype=np.int64)
    vt = g.vertices.take(idx)
    src_parts, dst_parts = [], []
    for a in range(idx.size):
        row = g.adjacency_row(idx[a])[idx]
        row &= idx != idx[a]
        hits = np.nonzero(row)[0]
        if hits.size:
            src_parts.append(np.full(hits.size, a, dtype=np.int64))
            dst_parts.append(hits.astype(np.int64))
    src = np.concatenate(src_parts) if src_parts else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dst_parts) if dst_parts else np.zeros(0, dtype=np.int64)
    return DirectedGraph(vt, src, dst)


def bootstrap_se(g: DirectedGraph, spec, n_boot, seed=0, budget=DEFAULT_BUDGET,
                 tol=1e-8, replicate_seeds=None, exhaustive_limit=EXHAUSTIVE_LIMIT) -> BootstrapResult:
    """Vertex-level nonparametric bootstrap of the tetrad fit.

    Each replicate resamples vertices with replacement, rebuilds the
    induced graph and its feature context, re-enumerates tetrads, and
    refits. Replicates with no qualifying tetrad (or a failed refit) are
    dropped with a counter; more than half dropped is a failure.
    ``replicate_seeds`` overrides the per-replicate RNG seeding, which also
    enables paired-seed designs.
    """
    if n_boot < 2:
        raise DomainError("bootstrap needs n_boot >= 2")
    if replicate_seeds is not None and len(replicate_seeds) != n_boot:
        raise ConfigError("replicate_seeds length must equal n_boot")

    children = np.random.SeedSequence(seed).spawn(n_boot)
    betas = []
    names = None
    dropped = 0
    for r in range(n_boot):
        rng = np.random.default_rng(replicate_seeds[r] if replicate_seeds is not None else children[r])
        idx = rng.integers(0, g.n, size=g.n)
        tetrad_seed = int(rng.integers(np.iinfo(np.int64).max))
        try:
            g_r = _resample_graph(g, idx)
            ctx_r = FeatureContext(g_r.vertices, spec, graph=g_r)
            ts = enumerate_tetrads(g_r, ctx_r, budget=budget, seed=tetrad_seed,
                                   exhaustive_limit=exhaustive_limit)
            fit = fit_tetrad(ts, tol=tol)
        except (EmptyTetradError, NumericalError, OptimizationError):
            dropped += 1
            continue
        betas.append(fit.beta)
        names = fit.names
    if dropped > n_boot // 2:
        raise OptimizationError(f"{dropped} of {n_boot} bootstrap replicates dropped")
    stack = np.vstack(betas)
    ok = np.all(np.isfinite(stack), axis=0)
    se = np.full(stack.shape[1], np.nan)
    se[ok] = stack[:, ok].std(axis=0, ddof=1)
    return BootstrapResult(se=se, betas=stack, n_dropped=dropped, names=names)


@dataclass(frozen=True)
class CoefficientDelta:
    name: str
    exp_plain: float
    exp_fe: float
    delta: float


def compare_fits(plain: FitResult, fe: FitResult):
    """Exponentiated coefficients side by side for the shared columns."""
    shared = [name for name in plain.names if name in fe.names]
    if not shared:
        raise ConfigError("fits share no design columns")
    rows = []
    for name in shared:
        bp = float(plain.beta[plain.names.index(name)])
        bf = float(fe.beta[fe.names.index(name)])
        rows.append(CoefficientDelta(
            name=name,
            exp_plain=float(np.exp(bp)),
            exp_fe=float(np.exp(bf)),
            delta=float(np.exp(bf) - np.exp(bp)),
        ))
    return rows
