"""Dyadic logit estimation.

Two fitting routes share one likelihood:

* ``fit_streaming`` optimizes over the dyad block stream, so memory stays
  O(batch x width + width^2) no matter how many dyads exist. The default
  method accumulates the exact gradient and Hessian in one pass per epoch
  and takes damped second-order steps; mini-batch methods (variance
  reduced or plain, with inverse-time decay) are available when even
  width^2 state or a full pass per step is unwanted.
* ``fit_newton`` materializes the rows (guarded) and solves the exact MLE
  by damped Newton iterations on the dense matrix. It is the small-scale
  oracle the streaming fitter is validated against.

Standard errors come from the inverse observed information, accumulated in
one streaming pass. All reductions run in a fixed block order, so results
are bit-identical for any worker count.
"""

from __future__ import annotations

import concurrent.futures
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import (
    ConfigError,
    DomainError,
    OptimizationError,
    RankDeficiencyError,
    SeparationError,
    SeparationWarning,
)

MATERIALIZE_GUARD = 5_000_000

SEPARATION_BETA_MAX = 15.0
SEPARATION_PATIENCE = 3


def average_nll(x, w, beta, l2_penalty=0.0):
    """Average negative log-likelihood, ridge term included."""
    z = x @ beta
    nll = float(np.mean(np.logaddexp(0.0, z) - w * z))
    if l2_penalty:
        nll += 0.5 * l2_penalty * float(beta @ beta)
    return nll


def loglik_and_gradient(x, w, beta, l2_penalty=0.0):
    """Average negative log-likelihood and its gradient on one batch.

    Stable for any finite linear predictor: the per-row loss is evaluated
    by log-sum-exp and the probabilities saturate instead of overflowing.

    Returns
    -------
    (float, ndarray)
        Mean negative log-likelihood and its gradient in beta.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if x.shape[1] != beta.size:
        raise DomainError(f"beta width {beta.size} does not match design width {x.shape[1]}")
    z = x @ beta
    p = expit(z)
    m = x.shape[0]
    nll = float(np.mean(np.logaddexp(0.0, z) - w * z))
    grad = x.T @ (p - w) / m
    if l2_penalty:
        nll += 0.5 * l2_penalty * float(beta @ beta)
        grad = grad + l2_penalty * beta
    return nll, grad


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs for the streaming fitter.

    ``method="newton"`` (default) runs one full streaming pass per epoch,
    accumulating the exact gradient and Hessian (width^2 state), and takes
    a damped second-order step; it matches the materialized oracle to
    machine precision in a handful of epochs regardless of how rare the
    indicator features are. ``method="svrg"`` takes mini-batch steps
    anchored on a per-epoch full-pass gradient; ``method="sgd"`` is the
    plain mini-batch update with inverse-time decay
    lr / (1 + lr_decay * e) and optional adaptive per-coordinate scaling.
    The first-order methods trade tail accuracy for per-step cost; see the
    README for when to prefer them.
    """

    batch_size: int = 8192
    learning_rate: float = 1.0
    lr_decay: float = 0.0
    max_epochs: int = 60
    tolerance: float = 1e-10
    gradient_tolerance: float = 1e-9
    seed: int = 0
    l2_penalty: float = 0.0
    method: str = "newton"
    adaptive: bool = False
    compute_se: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")
        if self.method not in ("newton", "svrg", "sgd"):
            raise ConfigError(f"bad method {self.method!r}")

    def to_dict(self):
        return {
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lr_decay": self.lr_decay,
            "max_epochs": self.max_epochs,
            "tolerance": self.tolerance,
            "gradient_tolerance": self.gradient_tolerance,
            "seed": self.seed,
            "l2_penalty": self.l2_penalty,
            "method": self.method,
            "adaptive": self.adaptive,
            "compute_se": self.compute_se,
        }


@dataclass
class FitResult:
    """Estimates aligned to the design manifest, beta_D first then beta_X."""

    beta: np.ndarray
    se: np.ndarray
    avg_nll: float
    n_obs: int
    converged: bool
    iterations: int
    config_hash: str = ""
    names: tuple = ()
    grad_norm: float = np.nan
    unidentified: tuple = ()
    loss_history: tuple = ()


def _stars(z):
    if not np.isfinite(z):
        return ""
    a = abs(z)
    if a > 2.5758293035489004:
        return "***"
    if a > 1.959963984540054:
        return "**"
    if a > 1.6448536269514722:
        return "*"
    return ""


def fit_result_rows(fr: FitResult):
    """(name, estimate, se, z, stars) per coefficient, NaN rows for unidentified."""
    rows = []
    names = fr.names or tuple(f"b{k}" for k in range(fr.beta.size))
    for k, name in enumerate(names):
        b, s = fr.beta[k], fr.se[k]
        z = b / s if (np.isfinite(s) and s > 0) else np.nan
        rows.append((name, b, s, z, _stars(z)))
    return rows


def format_fit_result(fr: FitResult, label="fit"):
    """Human-readable coefficient table with convergence diagnostics."""
    lines = [
        f"# {label}",
        f"# n_obs={fr.n_obs} converged={fr.converged} iterations={fr.iterations} "
        f"avg_nll={fr.avg_nll!r} grad_norm={fr.grad_norm!r}",
        f"# config_hash={fr.config_hash}",
    ]
    if fr.unidentified:
        lines.append("# unidentified: " + ", ".join(fr.unidentified))
    lines.append(f"{'coefficient':<28}{'estimate':>14}{'se':>12}{'z':>10}  sig")
    for name, b, s, z, stars in fit_result_rows(fr):
        bs = f"{b:.6f}" if np.isfinite(b) else "NA"
        ss = f"{s:.6f}" if np.isfinite(s) else "NA"
        zs = f"{z:.2f}" if np.isfinite(z) else "NA"
        lines.append(f"{name:<28}{bs:>14}{ss:>12}{zs:>10}  {stars}")
    return "\n".join(lines) + "\n"


class ArrayBlockSource:
    """Materialized rows exposed through the streaming-block interface."""

    def __init__(self, x, w, block_rows=16384, shuffle_seed=None):
        self.x = np.asarray(x, dtype=np.float64)
        self.w = np.asarray(w, dtype=np.float64)
        self.block_rows = int(block_rows)
        self.shuffle_seed = shuffle_seed

    def design_blocks(self, epoch):
        m = self.x.shape[0]
        if self.shuffle_seed is None:
            order = np.arange(m)
        else:
            order = np.random.default_rng(self.shuffle_seed + epoch).permutation(m)
        for lo in range(0, m, self.block_rows):
            idx = order[lo:lo + self.block_rows]
            yield self.x[idx], self.w[idx]


def materialize(blocks, guard=MATERIALIZE_GUARD):
    """Stack streaming blocks into dense arrays, refusing silly sizes."""
    xs, ws, total = [], [], 0
    for x, w in blocks:
        total += x.shape[0]
        if total > guard:
            raise DomainError(f"row count exceeds materialization guard {guard}")
        xs.append(x)
        ws.append(w)
    if not xs:
        raise DomainError("empty dyad stream")
    return np.concatenate(xs), np.concatenate(ws)


def _diagnose_collinear(matrix, names, tol=1e-8):
    """Names of columns involved in the null space of a gram/info matrix."""
    _, s, vt = np.linalg.svd(matrix)
    bad = s <= tol * max(s[0], 1.0)
    cols = set()
    for row in vt[bad]:
        for k in np.nonzero(np.abs(row) > 1e-6)[0]:
            cols.add(int(k))
    names = names or tuple(f"b{k}" for k in range(matrix.shape[0]))
    return tuple(names[k] for k in sorted(cols))


def _invert_information(info, names):
    try:
        cho = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        cols = _diagnose_collinear(info, names)
        raise RankDeficiencyError(f"singular information matrix; collinear columns: {cols}", columns=cols) from None
    inv = np.linalg.inv(cho)
    return inv.T @ inv


def fit_newton(x, w, tol=1e-10, max_iter=100, names=(), l2_penalty=0.0, config_hash=""):
    """Exact MLE by damped Newton-Raphson on materialized rows.

    This is the oracle route: it stops when the gradient infinity-norm
    drops below ``tol``. Standard errors use the unpenalized observed
    information at the optimum.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    m, width = x.shape
    if m > MATERIALIZE_GUARD:
        raise DomainError(f"{m} rows exceed the materialization guard {MATERIALIZE_GUARD}")
    if m == 0:
        raise DomainError("no rows to fit")
    if w.min() == w.max() and l2_penalty == 0.0:
        raise SeparationError(f"outcome is constant {w[0]:g}; the MLE is not finite")

    beta = np.zeros(width)
    nll, grad = loglik_and_gradient(x, w, beta, l2_penalty)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(x @ beta)
        s = p * (1.0 - p)
        hess = (x * s[:, None]).T @ x / m
        if l2_penalty:
            hess = hess + l2_penalty * np.eye(width)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            cols = _diagnose_collinear(hess, names)
            raise RankDeficiencyError(f"singular Hessian; collinear columns: {cols}", columns=cols) from None
        # Backtracking keeps far-from-optimum steps from overshooting.
        scale = 1.0
        for _ in range(40):
            cand = beta - scale * step
            cand_nll = average_nll(x, w, cand, l2_penalty)
            if cand_nll <= nll:
                break
            scale *= 0.5
        beta = beta - scale * step
        nll, grad = loglik_and_gradient(x, w, beta, l2_penalty)
        if not np.isfinite(nll):
            raise OptimizationError(f"newton diverged at iteration {it}")
        if np.max(np.abs(grad)) < tol:
            converged = True
            break

    p = expit(x @ beta)
    info = (x * (p * (1.0 - p))[:, None]).T @ x
    cov = _invert_information(info, names)
    se = np.sqrt(np.diag(cov))
    return FitResult(
        beta=beta,
        se=se,
        avg_nll=average_nll(x, w, beta),
        n_obs=m,
        converged=converged,
        iterations=it,
        config_hash=config_hash,
        names=tuple(names),
        grad_norm=float(np.max(np.abs(grad))),
    )


def _ordered_map(items, fn, workers):
    """Map preserving input order; threads only prefetch, never reorder."""
    if workers <= 1:
        for item in items:
            yield fn(item)
        return
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        pending = []
        items = iter(items)
        exhausted = False
        while pending or not exhausted:
            while not exhausted and len(pending) < workers + 2:
                try:
                    pending.append(pool.submit(fn, next(items)))
                except StopIteration:
                    exhausted = True
            if pending:
                yield pending.pop(0).result()


def _design_blocks(source, epoch, workers):
    if workers > 1 and hasattr(source, "index_blocks"):
        ctx = source.ctx
        return _ordered_map(
            source.index_blocks(epoch),
            lambda IJ: (ctx.design_pairs(IJ[0], IJ[1]), ctx.outcomes(IJ[0], IJ[1])),
            workers,
        )
    return source.design_blocks(epoch)


def _full_pass(source, beta, epoch, l2_penalty, workers, with_hessian=False):
    """Exact dataset NLL/gradient (and optionally the averaged Hessian) in
    one ordered streaming reduction."""
    width = beta.size
    grad_sum = np.zeros(width)
    hess_sum = np.zeros((width, width)) if with_hessian else None
    nll_sum = 0.0
    count = 0
    pos = 0.0
    for x, w in _design_blocks(source, epoch, workers):
        z = x @ beta
        p = expit(z)
        nll_sum += float(np.sum(np.logaddexp(0.0, z) - w * z))
        grad_sum += x.T @ (p - w)
        if with_hessian:
            hess_sum += (x * (p * (1.0 - p))[:, None]).T @ x
        count += x.shape[0]
        pos += float(w.sum())
    if count == 0:
        raise DomainError("empty dyad stream")
    nll = nll_sum / count
    grad = grad_sum / count
    if l2_penalty:
        nll += 0.5 * l2_penalty * float(beta @ beta)
        grad = grad + l2_penalty * beta
    if with_hessian:
        hess = hess_sum / count
        if l2_penalty:
            hess = hess + l2_penalty * np.eye(width)
        return nll, grad, hess, count, pos
    return nll, grad, count, pos


def _batches(blocks, batch_size):
    for x, w in blocks:
        for lo in range(0, x.shape[0], batch_size):
            yield x[lo:lo + batch_size], w[lo:lo + batch_size]


def fit_streaming(source, cfg: OptimizerConfig = None, names=(), config_hash="", workers=1):
    """Bounded-memory fit over a re-iterable dyad block source.

    ``source.design_blocks(epoch)`` must yield (x, w) blocks covering every
    dyad exactly once per epoch; epoch e is expected to reshuffle with
    seed + e so reruns are bit-identical. Raises OptimizationError on a
    non-finite epoch loss and emits SeparationWarning when the data admit
    no finite MLE. The convergence check always ends with an exact
    full-pass gradient evaluation at the final coefficients.
    """
    cfg = cfg or OptimizerConfig()
    width = _peek_width(source)
    beta = np.zeros(width)
    adagrad = np.zeros(width)
    prev_loss = None
    accepted = None
    damping = 0.0
    converged = False
    epochs_run = 0
    n_obs = 0
    progress = []  # full-pass gradient norms or epoch losses, per method
    loss_hist = []
    warned = False

    for epoch in range(cfg.max_epochs):
        eta = cfg.learning_rate / (1.0 + cfg.lr_decay * epoch)

        if cfg.method == "newton":
            nll, grad, hess, n_obs, pos = _full_pass(
                source, beta, epoch, cfg.l2_penalty, workers, with_hessian=True)
            if not np.isfinite(nll):
                raise OptimizationError(f"loss became non-finite at epoch {epoch + 1}")
            if epoch == 0:
                warned = _warn_if_constant(pos, n_obs, warned)
            epochs_run = epoch + 1
            if prev_loss is not None and nll > prev_loss:
                # Overshoot: re-damp and restep from the last accepted point
                # (its gradient and Hessian are cached; no extra pass).
                damping = max(damping * 10.0, 1e-6)
                a_nll, a_grad, a_hess, a_beta = accepted
                step = np.linalg.solve(a_hess + damping * np.eye(width), a_grad)
                beta = a_beta - eta * step
                continue
            gnorm = float(np.max(np.abs(grad)))
            loss_hist.append(nll)
            if (prev_loss is not None and abs(prev_loss - nll) <= cfg.tolerance * max(1.0, abs(nll))) \
                    or gnorm < cfg.gradient_tolerance:
                converged = True
                break
            prev_loss = nll
            accepted = (nll, grad, hess, beta.copy())
            progress.append(gnorm)
            damping = 0.0 if damping < 1e-12 else damping / 4.0
            h = hess + damping * np.eye(width) if damping else hess
            try:
                step = np.linalg.solve(h, grad)
            except np.linalg.LinAlgError:
                damping = max(damping * 10.0, 1e-6)
                step = np.linalg.solve(hess + damping * np.eye(width), grad)
            beta = beta - eta * step
        elif cfg.method == "svrg":
            anchor = beta.copy()
            anchor_nll, anchor_grad, n_obs, pos = _full_pass(source, anchor, epoch, cfg.l2_penalty, workers)
            if not np.isfinite(anchor_nll):
                raise OptimizationError(f"loss became non-finite at epoch {epoch + 1}")
            if epoch == 0:
                warned = _warn_if_constant(pos, n_obs, warned)
            loss_hist.append(anchor_nll)
            if prev_loss is not None and abs(prev_loss - anchor_nll) <= cfg.tolerance * max(1.0, abs(anchor_nll)):
                converged = True
                break
            prev_loss = anchor_nll
            progress.append(float(np.max(np.abs(anchor_grad))))
            for xb, wb in _batches(_design_blocks(source, epoch, workers), cfg.batch_size):
                gb = xb.T @ (expit(xb @ beta) - wb) / xb.shape[0]
                ga = xb.T @ (expit(xb @ anchor) - wb) / xb.shape[0]
                g = gb - ga + anchor_grad
                if cfg.l2_penalty:
                    g = g + cfg.l2_penalty * (beta - anchor)
                beta = beta - eta * g
        else:
            loss_sum, rows, pos = 0.0, 0, 0.0
            for xb, wb in _batches(_design_blocks(source, epoch, workers), cfg.batch_size):
                nll, g = loglik_and_gradient(xb, wb, beta, cfg.l2_penalty)
                loss_sum += nll * xb.shape[0]
                rows += xb.shape[0]
                pos += float(wb.sum())
                if cfg.adaptive:
                    adagrad += g * g
                    beta = beta - eta * g / np.sqrt(adagrad + 1e-12)
                else:
                    beta = beta - eta * g
            if rows == 0:
                raise DomainError("empty dyad stream")
            n_obs = rows
            epoch_loss = loss_sum / rows
            if not np.isfinite(epoch_loss) or not np.all(np.isfinite(beta)):
                raise OptimizationError(f"loss became non-finite at epoch {epoch + 1}")
            if epoch == 0:
                warned = _warn_if_constant(pos, rows, warned)
            loss_hist.append(epoch_loss)
            if prev_loss is not None and abs(prev_loss - epoch_loss) <= cfg.tolerance * max(1.0, abs(epoch_loss)):
                epochs_run = epoch + 1
                converged = True
                break
            prev_loss = epoch_loss
            progress.append(epoch_loss)

        epochs_run = epoch + 1
        if (not warned and np.max(np.abs(beta)) > SEPARATION_BETA_MAX
                and len(progress) >= SEPARATION_PATIENCE
                and not _decreasing(progress[-SEPARATION_PATIENCE:])):
            warnings.warn(
                f"|beta| exceeds {SEPARATION_BETA_MAX} without optimization progress; "
                "possible separation (consider l2_penalty)",
                SeparationWarning, stacklevel=2)
            warned = True

    # Convergence check ends with one exact full-pass gradient evaluation.
    final_nll, final_grad, n_obs, _ = _full_pass(source, beta, 0, cfg.l2_penalty, workers)
    if cfg.compute_se:
        se = streaming_standard_errors(source, beta, names=names, workers=workers, strict=False)
    else:
        se = np.full(width, np.nan)
    return FitResult(
        beta=beta,
        se=se,
        avg_nll=average_nll_from(final_nll, beta, cfg.l2_penalty),
        n_obs=n_obs,
        converged=converged,
        iterations=epochs_run,
        config_hash=config_hash,
        names=tuple(names),
        grad_norm=float(np.max(np.abs(final_grad))),
        loss_history=tuple(loss_hist),
    )


def _warn_if_constant(pos, rows, warned):
    if not warned and pos in (0.0, float(rows)):
        warnings.warn(
            "outcome is constant; no finite MLE exists (consider l2_penalty)",
            SeparationWarning, stacklevel=3)
        return True
    return warned


def average_nll_from(penalized_nll, beta, l2_penalty):
    if l2_penalty:
        return penalized_nll - 0.5 * l2_penalty * float(beta @ beta)
    return penalized_nll


def _peek_width(source):
    for x, _ in source.design_blocks(0):
        return x.shape[1]
    raise DomainError("empty dyad stream")


def _decreasing(vals):
    return all(b < a for a, b in zip(vals, vals[1:]))


def streaming_information(source, beta, workers=1):
    """Observed information accumulated over one deterministic pass."""
    info = np.zeros((beta.size, beta.size))
    for x, w in _design_blocks(source, 0, workers):
        p = expit(x @ beta)
        info += (x * (p * (1.0 - p))[:, None]).T @ x
    return info


def streaming_standard_errors(source, beta, names=(), workers=1, strict=True):
    """Inverse-information standard errors from a single streaming pass."""
    info = streaming_information(source, beta, workers=workers)
    try:
        cov = _invert_information(info, names)
    except RankDeficiencyError:
        if strict:
            raise
        return np.full(beta.size, np.nan)
    return np.sqrt(np.diag(cov))


def standard_errors(source, beta, names=(), workers=1):
    return streaming_standard_errors(source, beta, names=names, workers=workers, strict=True)


def fit_by_country(ctx, countries, cfg: OptimizerConfig = None, config_hash="", workers=1):
    """World fit plus one fit per src-country restriction.

    Countries absent from the data raise ConfigError before any fitting
    starts. Optimizer failures are collected per restriction so the
    remaining restrictions still complete.

    Returns
    -------
    (dict, dict)
        Fits keyed by "world" or country label, and failure messages for
        restrictions whose optimization failed.
    """
    from .features import BlockSource

    cfg = cfg or OptimizerConfig()
    for c in countries:
        if ctx.vertices.label_code("country", c) < 0:
            raise ConfigError(f"country {c!r} absent from the data")
    fits, failures = {}, {}
    for label, restrict in [("world", None)] + [(c, c) for c in countries]:
        source = BlockSource(ctx, restrict_src_country=restrict, seed=cfg.seed)
        try:
            fits[label] = fit_streaming(
                source, cfg, names=ctx.manifest.names, config_hash=config_hash, workers=workers)
        except (OptimizationError, RankDeficiencyError, DomainError) as exc:
            failures[label] = str(exc)
    return fits, failures


@dataclass(frozen=True)
class MarginalEffect:
    name: str
    kind: str  # "discrete" | "continuous"
    value: float


def marginal_effects_at_mean(beta, xbar, manifest):
    """Connection-probability changes for a typical dyad.

    Indicator features report the discrete change: the predicted
    probability with the dummy at 1 (its own exclusive bin group zeroed
    first) minus the probability with the dummy at 0. Continuous features
    report the density-scaled slope at the mean row.
    """
    beta = np.asarray(beta, dtype=np.float64)
    xbar = np.asarray(xbar, dtype=np.float64)
    if beta.size != manifest.width or xbar.size != manifest.width:
        raise DomainError("beta/xbar width does not match the manifest")
    zbar = float(xbar @ beta)
    lam = expit(zbar)
    slope = lam * (1.0 - lam)
    effects = []
    for k, name in enumerate(manifest.names):
        kind = manifest.kinds[k]
        if kind == "intercept":
            continue
        if kind == "continuous":
            effects.append(MarginalEffect(name=name, kind="continuous", value=float(slope * beta[k])))
            continue
        base = xbar.copy()
        group = manifest.groups[k]
        if group is not None:
            for q in range(manifest.width):
                if manifest.groups[q] == group:
                    base[q] = 0.0
        x1 = base.copy()
        x1[k] = 1.0
        x0 = base.copy()
        x0[k] = 0.0
        value = float(expit(x1 @ beta) - expit(x0 @ beta))
        effects.append(MarginalEffect(name=name, kind="discrete", value=value))
    return effects
