"""Descriptive network statistics: degree laws, neighbor degrees, distance
histograms, country flow matrices, attribute summaries.

Every statistic has a matching ``write_*`` helper that emits a delimited
plot-data file with a header naming the analysis, so results can be drawn
by any external tool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geo import EARTH_RADIUS_KM
from .graph import UNKNOWN, DirectedGraph, VertexTable

HALF_CIRCUMFERENCE_KM = math.pi * EARTH_RADIUS_KM


@dataclass(frozen=True)
class PowerLawFit:
    """Log-log least-squares fit of the degree mass function."""

    lam: float
    c: float
    xmin: int
    r2: float


def loglog_fit(values, mass, weights=None):
    """Least-squares line of log(mass) on log(values), optionally weighted."""
    lx = np.log(np.asarray(values, dtype=np.float64))
    ly = np.log(np.asarray(mass, dtype=np.float64))
    wt = np.ones_like(lx) if weights is None else np.asarray(weights, dtype=np.float64)
    wsum = wt.sum()
    mx = (wt * lx).sum() / wsum
    my = (wt * ly).sum() / wsum
    sxx = (wt * (lx - mx) ** 2).sum()
    if sxx == 0.0:
        raise DomainError("no variation in log degree")
    slope = (wt * (lx - mx) * (ly - my)).sum() / sxx
    intercept = my - slope * mx
    resid = ly - (slope * lx + intercept)
    ss_res = float((wt * resid ** 2).sum())
    ss_tot = float((wt * (ly - my) ** 2).sum())
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res < 1e-24 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


def fit_power_law(degrees, xmin=1) -> PowerLawFit:
    """Fit P(d) = c * d^-lam on the empirical mass function of degrees >= xmin.

    Zero degrees never enter (log is undefined there); at least two
    distinct degree values must survive the cutoff. Each mass point is
    weighted by its observed count, so sparse tail singletons carry only
    the information they actually hold instead of flattening the slope.
    """
    if xmin < 1:
        raise DomainError("xmin must be >= 1")
    d = np.asarray(degrees, dtype=np.int64)
    d = d[d >= xmin]
    values, counts = np.unique(d, return_counts=True)
    if values.size < 2:
        raise DomainError("power-law fit needs at least 2 distinct degree values")
    pmf = counts / counts.sum()
    slope, intercept, r2 = loglog_fit(values, pmf, weights=counts)
    return PowerLawFit(lam=-slope, c=float(np.exp(intercept)), xmin=int(xmin), r2=r2)


def neighbor_avg_in_degree(g: DirectedGraph):
    """Per vertex: own in-degree and the mean in-degree of its followees.

    Vertices with no followees get NaN in the second array; curves should
    skip them.
    """
    indeg = g.in_degrees().astype(np.float64)
    total = np.zeros(g.n)
    np.add.at(total, g.src, indeg[g.dst])
    outdeg = g.out_degrees().astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(outdeg > 0, total / outdeg, np.nan)
    return indeg.astype(np.int64), mean


def default_distance_edges(n_bins=200):
    """Equal-width kilometer bins spanning every possible surface distance."""
    return np.linspace(0.0, HALF_CIRCUMFERENCE_KM, n_bins + 1)


@dataclass(frozen=True)
class DistanceHistogram:
    bin_edges_km: np.ndarray
    counts: np.ndarray
    population: str  # "all" | "mutual"

    @property
    def total(self):
        return int(self.counts.sum())


def distance_histogram(g: DirectedGraph, population="all", bin_edges_km=None) -> DistanceHistogram:
    """Histogram of pair distances over unordered dyads.

    population="all" counts every unordered pair once; "mutual" counts
    only mutually connected pairs. Distances beyond the edge range are
    accumulated into the boundary bins so the counts always sum to the
    population size.
    """
    if population not in ("all", "mutual"):
        raise DomainError(f"bad population {population!r}")
    edges = np.asarray(bin_edges_km if bin_edges_km is not None else default_distance_edges(),
                       dtype=np.float64)
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise DomainError("bin edges must be ascending with at least 2 entries")
    vt = g.vertices
    phi = np.radians(vt.lat)
    cosphi = np.cos(phi)
    lam = np.radians(vt.lon)
    counts = np.zeros(edges.size - 1, dtype=np.int64)

    def _accumulate(I, J):
        a = (np.sin((phi[J] - phi[I]) / 2.0) ** 2
             + cosphi[I] * cosphi[J] * np.sin((lam[J] - lam[I]) / 2.0) ** 2)
        d = EARTH_RADIUS_KM * 2.0 * np.arcsin(np.sqrt(np.minimum(a, 1.0)))
        np.clip(d, edges[0], edges[-1], out=d)
        counts[:] += np.histogram(d, bins=edges)[0]

    if population == "all":
        for i in range(vt.n - 1):
            J = np.arange(i + 1, vt.n, dtype=np.int64)
            _accumulate(np.full(J.size, i, dtype=np.int64), J)
    else:
        mg = g.mutual_view()
        upper = mg.src < mg.dst
        _accumulate(mg.src[upper], mg.dst[upper])
    return DistanceHistogram(bin_edges_km=edges, counts=counts, population=population)


def country_follow_matrix(g: DirectedGraph, top_k):
    """Edge counts between the top_k countries by user base, rest in OTHER.

    Returns (labels, matrix) with matrix[a, b] = edges from labels[a] to
    labels[b]. The UNKNOWN group always aggregates into OTHER.
    """
    if top_k < 1:
        raise DomainError("top_k must be >= 1")
    vt = g.vertices
    codes = vt.codes("country")
    labels = vt.labels("country")
    base = np.bincount(codes, minlength=len(labels))
    ranked = sorted(
        (c for c in range(len(labels)) if base[c] > 0 and labels[c] != UNKNOWN),
        key=lambda c: (-base[c], labels[c]),
    )
    top = ranked[:top_k]
    rest = [c for c in range(len(labels)) if c not in top]
    has_other = any(base[c] > 0 for c in rest)

    slot = np.full(len(labels), len(top), dtype=np.int64)
    for s, c in enumerate(top):
        slot[c] = s
    size = len(top) + (1 if has_other else 0)
    mat = np.zeros((size, size), dtype=np.int64)
    if g.m:
        np.add.at(mat, (slot[codes[g.src]], slot[codes[g.dst]]), 1)
    out_labels = [labels[c] for c in top] + (["OTHER"] if has_other else [])
    return out_labels, mat


def summary_table(vertices: VertexTable):
    """Mean, stddev (ddof=1, 0 for a single row), min, max per numeric column."""
    if vertices.n < 1:
        raise DomainError("summary needs at least 1 vertex")
    rows = []
    cols = [("lat", vertices.lat), ("lon", vertices.lon)]
    cols += [(c, vertices.numeric(c)) for c in vertices.numeric_columns]
    for name, arr in cols:
        sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        rows.append((name, float(arr.mean()), sd, float(arr.min()), float(arr.max())))
    return rows


def lower_median(values):
    """Deterministic median: the lower of the two middle order statistics."""
    v = np.sort(np.asarray(values))
    if v.size == 0:
        raise DomainError("median of empty set")
    return v[(v.size - 1) // 2]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_delimited(path, header_comment, columns, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# plot: {header_comment}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_summary_table(vertices, path):
    _write_delimited(path, "vertex attribute summary",
                     ["attribute", "mean", "stddev", "min", "max"], summary_table(vertices))


def write_degree_distribution(g, path, xmin=1):
    degrees = g.in_degrees()
    values, counts = np.unique(degrees, return_counts=True)
    pmf = counts / counts.sum()
    try:
        fit = fit_power_law(degrees, xmin=xmin)
        fit_line = f"lambda={fit.lam!r} c={fit.c!r} xmin={fit.xmin} r2={fit.r2!r}"
    except DomainError as exc:
        fit_line = f"unavailable ({exc})"
    med = lower_median(degrees)
    rows = list(zip(values, counts, pmf))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# plot: in-degree distribution (log-log)\n")
        fh.write(f"# power-law fit: {fit_line}\n")
        fh.write(f"# median in-degree (lower): {med}\n")
        fh.write("in_degree,count,pmf\n")
        for d, c, p in rows:
            fh.write(f"{d},{c},{p!r}\n")


def write_neighbor_curve(g, path):
    indeg, mean = neighbor_avg_in_degree(g)
    rows = []
    for i in range(g.n):
        rows.append((i, int(indeg[i]), "NA" if np.isnan(mean[i]) else repr(float(mean[i]))))
    _write_delimited(path, "own in-degree vs mean followee in-degree",
                     ["vertex", "in_degree", "mean_followee_in_degree"], rows)


def write_distance_histograms(hist_all, hist_mutual, path):
    edges = hist_all.bin_edges_km
    rows = []
    for k in range(hist_all.counts.size):
        rows.append((repr(float(edges[k])), repr(float(edges[k + 1])),
                     int(hist_all.counts[k]), int(hist_mutual.counts[k])))
    _write_delimited(path, "pair distance histogram, all vs mutually connected dyads",
                     ["bin_lo_km", "bin_hi_km", "all_pairs", "mutual_pairs"], rows)


def write_country_matrix(labels, mat, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# plot: follower country (rows) by followee country (columns) edge counts\n")
        fh.write("country," + ",".join(labels) + "\n")
        for k, label in enumerate(labels):
            fh.write(label + "," + ",".join(str(int(v)) for v in mat[k]) + "\n")


def write_popularity(pop, path):
    entries = sorted(pop.values(), key=lambda e: (-e.score, e.country))
    rows = [(e.country, e.user_base, e.foreign_followers, repr(e.score), e.popular_flag) for e in entries]
    _write_delimited(path, "country popularity ranking",
                     ["country", "user_base", "foreign_followers", "score", "popular_flag"], rows)
