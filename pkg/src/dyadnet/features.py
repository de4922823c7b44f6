"""Dyad design rows: pairwise covariates, outcome lookup, and streaming.

A FeatureContext freezes everything needed to turn an ordered vertex pair
(i, j) into a design row: the distance-bin scheme, homophily thresholds,
the country popularity table, and standardization statistics for the
activity covariates. Rows are produced in vectorized blocks so a full
O(n^2) sweep never materializes more than one block at a time.

The row layout is [D | X]: distance-bin indicators and geographic
homophily first, then controls and the intercept. The layout is fixed per
context and described by its manifest.
"""

from __future__ import annotations

import csv
import importlib.resources
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DomainError
from .geo import DistanceBinScheme, EARTH_RADIUS_KM, bin_indicator_matrix
from .graph import ACTIVITY_COLUMNS, UNKNOWN, DirectedGraph, VertexTable

_BLOCK_ROWS = 16384


def _fmt_window(w):
    return str(int(w)) if float(w).is_integer() else str(w)


@dataclass(frozen=True)
class FeatureSpec:
    """Which feature groups enter the design row, plus their knobs.

    popularity: "none" | "score" | "flag" | "both" (receiver-country terms)
    activity:   "none" | "src" | "dst" | "both" (standardized counters)
    view:       "directed" | "mutual" (which network defines the outcome
                and, for mutual, the unordered-pair dyad population)
    """

    distance_bins: bool = True
    geo_homophily: bool = True
    similarity: bool = True
    directional: bool = True
    popularity: str = "both"
    activity: str = "both"
    age_window: float = 5.0
    height_window: float = 5.0
    weight_window: float = 5.0
    view: str = "directed"
    bin_scheme: DistanceBinScheme = field(default_factory=DistanceBinScheme)

    def __post_init__(self):
        if self.popularity not in ("none", "score", "flag", "both"):
            raise ConfigError(f"bad popularity mode {self.popularity!r}")
        if self.activity not in ("none", "src", "dst", "both"):
            raise ConfigError(f"bad activity mode {self.activity!r}")
        if self.view not in ("directed", "mutual"):
            raise ConfigError(f"bad view {self.view!r}")
        for w in (self.age_window, self.height_window, self.weight_window):
            if w < 0:
                raise ConfigError("similarity windows must be non-negative")

    def to_dict(self):
        return {
            "distance_bins": self.distance_bins,
            "geo_homophily": self.geo_homophily,
            "similarity": self.similarity,
            "directional": self.directional,
            "popularity": self.popularity,
            "activity": self.activity,
            "age_window": self.age_window,
            "height_window": self.height_window,
            "weight_window": self.weight_window,
            "view": self.view,
            "distance_bins_km": list(self.bin_scheme.edges_km),
        }

    @staticmethod
    def from_dict(d):
        d = dict(d)
        edges = d.pop("distance_bins_km", None)
        if edges is not None:
            d["bin_scheme"] = DistanceBinScheme(tuple(edges))
        return FeatureSpec(**d)


@dataclass(frozen=True)
class CountryPopularity:
    country: str
    user_base: int
    foreign_followers: int
    score: float
    popular_flag: int


def popularity_index(g: DirectedGraph, min_base=50, top_k=7):
    """Country popularity: cross-country in-followers over the user base.

    An edge (i, j) with country(i) != country(j) counts toward country(j).
    Only countries with more than ``min_base`` users compete for the
    ``top_k`` popularity flags; the UNKNOWN group never does.
    """
    vt = g.vertices
    codes = vt.codes("country")
    labels = vt.labels("country")
    base = np.bincount(codes, minlength=len(labels))
    cross = codes[g.src] != codes[g.dst]
    foreign = np.bincount(codes[g.dst][cross], minlength=len(labels))

    score = np.zeros(len(labels), dtype=np.float64)
    present = base > 0
    score[present] = foreign[present] / base[present]

    eligible = [c for c in range(len(labels)) if base[c] > min_base and labels[c] != UNKNOWN]
    eligible.sort(key=lambda c: (-score[c], labels[c]))
    flagged = set(eligible[:top_k])

    out = {}
    for c in range(len(labels)):
        if not present[c]:
            continue
        out[labels[c]] = CountryPopularity(
            country=labels[c],
            user_base=int(base[c]),
            foreign_followers=int(foreign[c]),
            score=float(score[c]),
            popular_flag=int(c in flagged),
        )
    return out


@dataclass(frozen=True)
class StandardizeStats:
    columns: tuple
    mean: np.ndarray
    std: np.ndarray
    excluded: tuple  # column names with zero variance, left out of the design


def standardize_stats(vertices: VertexTable, columns=ACTIVITY_COLUMNS):
    """Sample mean and stddev (ddof=1) per column; constant columns flagged."""
    if vertices.n < 2:
        raise DomainError("standardization needs at least 2 vertices")
    cols = tuple(c for c in columns if c in vertices.numeric_columns)
    mean = np.array([vertices.numeric(c).mean() for c in cols])
    std = np.array([vertices.numeric(c).std(ddof=1) for c in cols])
    excluded = tuple(c for c, s in zip(cols, std) if s == 0.0)
    return StandardizeStats(columns=cols, mean=mean, std=std, excluded=excluded)


@dataclass
class DyadRow:
    """Design row for one ordered pair: outcome w, pair block d, controls x."""

    src: int
    dst: int
    w: int
    d: np.ndarray
    x: np.ndarray

    @property
    def row(self):
        return np.concatenate([self.d, self.x])


@dataclass(frozen=True)
class FeatureManifest:
    """Fixed column layout of the design row."""

    names: tuple
    kinds: tuple  # "indicator" | "continuous" | "intercept"
    groups: tuple  # "distance_bin" for the bin dummies, else None
    n_d: int  # width of the leading D block

    @property
    def width(self):
        return len(self.names)

    def index_of(self, name):
        return self.names.index(name)

    def to_rows(self):
        return [
            (k, self.names[k], self.kinds[k], self.groups[k] or "", "D" if k < self.n_d else "X")
            for k in range(self.width)
        ]


def load_continent_table():
    """Built-in country code -> continent name mapping."""
    table = {}
    ref = importlib.resources.files("dyadnet.data").joinpath("country_continents.csv")
    with ref.open("r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for country, continent in reader:
            table[country] = continent
    return table


class FeatureContext:
    """Frozen per-run feature machinery.

    Built once from the vertex table, the feature spec, and (when outcome
    or popularity lookups are needed) the loaded graph. Immutable after
    construction; all block builders are safe for concurrent readers.
    """

    def __init__(self, vertices: VertexTable, spec: FeatureSpec, graph: DirectedGraph = None,
                 continent_table=None):
        self.vertices = vertices
        self.spec = spec
        self.graph = graph
        if graph is not None and graph.vertices is not vertices:
            raise ConfigError("graph and vertex table must match")

        self._phi = np.radians(vertices.lat)
        self._cosphi = np.cos(self._phi)
        self._lam = np.radians(vertices.lon)

        # Continent codes: 0 = unknown, aligned with country codes.
        table = continent_table if continent_table is not None else load_continent_table()
        country_labels = vertices.labels("country")
        continent_names = [UNKNOWN] + sorted({table.get(c, UNKNOWN) for c in country_labels} - {UNKNOWN})
        cont_index = {name: k for k, name in enumerate(continent_names)}
        per_country = np.array(
            [cont_index[table.get(c, UNKNOWN)] if c != UNKNOWN else 0 for c in country_labels],
            dtype=np.int32,
        )
        self._continent = per_country[vertices.codes("country")]

        if spec.popularity != "none":
            if graph is None:
                raise ConfigError("popularity features need the loaded graph")
            pop = popularity_index(graph)
            self.popularity = pop
            self._pop_score = np.zeros(len(country_labels))
            self._pop_flag = np.zeros(len(country_labels))
            for label, entry in pop.items():
                c = vertices.label_code("country", label)
                self._pop_score[c] = entry.score
                self._pop_flag[c] = entry.popular_flag
        else:
            self.popularity = None

        if spec.activity != "none":
            self.std_stats = standardize_stats(vertices)
            keep = [k for k, c in enumerate(self.std_stats.columns) if c not in self.std_stats.excluded]
            self._act_cols = tuple(self.std_stats.columns[k] for k in keep)
            mat = np.empty((vertices.n, len(keep)))
            for out_k, k in enumerate(keep):
                col = self.std_stats.columns[k]
                mat[:, out_k] = (vertices.numeric(col) - self.std_stats.mean[k]) / self.std_stats.std[k]
            self._act = mat
        else:
            self.std_stats = None
            self._act_cols = ()
            self._act = None

        if graph is not None:
            self._w_graph = graph if spec.view == "directed" else graph.mutual_view()
        else:
            self._w_graph = None

        self.manifest = self._build_manifest()

    def _build_manifest(self):
        spec = self.spec
        names, kinds, groups = [], [], []

        if spec.distance_bins:
            for name in spec.bin_scheme.indicator_names:
                names.append(name)
                kinds.append("indicator")
                groups.append("distance_bin")
        if spec.geo_homophily:
            for name in ("same_continent", "same_country", "same_region", "same_city"):
                names.append(name)
                kinds.append("indicator")
                groups.append(None)
        n_d = len(names)

        if spec.similarity:
            sim = [
                "same_platform",
                f"age_within_{_fmt_window(spec.age_window)}y",
                "same_ethnicity",
                f"height_within_{_fmt_window(spec.height_window)}cm",
                f"weight_within_{_fmt_window(spec.weight_window)}kg",
                "same_language",
            ]
            for name in sim:
                names.append(name)
                kinds.append("indicator")
                groups.append(None)
        if spec.directional:
            for name in ("follower_older", "dst_taller"):
                names.append(name)
                kinds.append("indicator")
                groups.append(None)
        if spec.popularity in ("score", "both"):
            names.append("dst_country_popularity")
            kinds.append("continuous")
            groups.append(None)
        if spec.popularity in ("flag", "both"):
            names.append("dst_popular_country")
            kinds.append("indicator")
            groups.append(None)
        for side in ("src", "dst"):
            if self.spec.activity in (side, "both"):
                for col in self._act_cols:
                    names.append(f"act_{side}_{col}")
                    kinds.append("continuous")
                    groups.append(None)
        names.append("intercept")
        kinds.append("intercept")
        groups.append(None)

        return FeatureManifest(names=tuple(names), kinds=tuple(kinds), groups=tuple(groups), n_d=n_d)

    @property
    def width(self):
        return self.manifest.width

    @property
    def w_graph(self):
        if self._w_graph is None:
            raise ConfigError("context was built without a graph; outcomes unavailable")
        return self._w_graph

    def distances_km(self, I, J):
        """Haversine distances for paired index arrays."""
        dphi = self._phi[J] - self._phi[I]
        dlam = self._lam[J] - self._lam[I]
        a = np.sin(dphi / 2.0) ** 2 + self._cosphi[I] * self._cosphi[J] * np.sin(dlam / 2.0) ** 2
        return EARTH_RADIUS_KM * 2.0 * np.arcsin(np.sqrt(np.minimum(a, 1.0)))

    def design_pairs(self, I, J):
        """Design matrix (m x width) for ordered pairs (I[k], J[k])."""
        I = np.asarray(I, dtype=np.int64)
        J = np.asarray(J, dtype=np.int64)
        if np.any(I == J):
            raise DomainError("a dyad needs two distinct vertices")
        vt = self.vertices
        spec = self.spec
        m = I.size
        X = np.empty((m, self.width))
        col = 0

        if spec.distance_bins:
            edges = np.asarray(spec.bin_scheme.edges_km)
            idx = np.searchsorted(edges, self.distances_km(I, J), side="right")
            nb = len(edges)
            X[:, col:col + nb] = 0.0
            nz = idx > 0
            X[np.nonzero(nz)[0], col + idx[nz] - 1] = 1.0
            col += nb

        if spec.geo_homophily:
            ci, cj = self._continent[I], self._continent[J]
            X[:, col] = (ci == cj) & (ci != 0)
            col += 1
            for field_name in ("country", "region", "city"):
                a = vt.codes(field_name)[I]
                b = vt.codes(field_name)[J]
                X[:, col] = (a == b) & (a != 0)
                col += 1

        if spec.similarity:
            X[:, col] = vt.numeric("platform")[I] == vt.numeric("platform")[J]
            col += 1
            X[:, col] = np.abs(vt.numeric("age")[I] - vt.numeric("age")[J]) <= spec.age_window
            col += 1
            eth_i, eth_j = vt.codes("ethnicity")[I], vt.codes("ethnicity")[J]
            X[:, col] = (eth_i == eth_j) & (eth_i != 0)
            col += 1
            X[:, col] = np.abs(vt.numeric("height_cm")[I] - vt.numeric("height_cm")[J]) <= spec.height_window
            col += 1
            X[:, col] = np.abs(vt.numeric("weight_kg")[I] - vt.numeric("weight_kg")[J]) <= spec.weight_window
            col += 1
            lang_i, lang_j = vt.codes("language")[I], vt.codes("language")[J]
            X[:, col] = (lang_i == lang_j) & (lang_i != 0)
            col += 1

        if spec.directional:
            X[:, col] = vt.numeric("age")[I] > vt.numeric("age")[J]
            col += 1
            X[:, col] = vt.numeric("height_cm")[J] > vt.numeric("height_cm")[I]
            col += 1

        if spec.popularity in ("score", "both"):
            X[:, col] = self._pop_score[vt.codes("country")[J]]
            col += 1
        if spec.popularity in ("flag", "both"):
            X[:, col] = self._pop_flag[vt.codes("country")[J]]
            col += 1

        if self._act is not None:
            k = self._act.shape[1]
            if spec.activity in ("src", "both"):
                X[:, col:col + k] = self._act[I]
                col += k
            if spec.activity in ("dst", "both"):
                X[:, col:col + k] = self._act[J]
                col += k

        X[:, col] = 1.0
        col += 1
        assert col == self.width
        return X

    def outcomes(self, I, J):
        """Outcome W for ordered pairs under the configured network view."""
        g = self.w_graph
        out = g.has_edge(np.asarray(I, dtype=np.int64), np.asarray(J, dtype=np.int64))
        return np.asarray(out, dtype=np.float64)

    def build_dyad_row(self, i, j):
        """Single DyadRow for the ordered pair (i, j)."""
        if i == j:
            raise DomainError("a dyad needs two distinct vertices")
        I = np.array([i], dtype=np.int64)
        J = np.array([j], dtype=np.int64)
        x = self.design_pairs(I, J)[0]
        w = int(self.outcomes(I, J)[0]) if self.graph is not None else 0
        n_d = self.manifest.n_d
        return DyadRow(src=int(i), dst=int(j), w=w, d=x[:n_d].copy(), x=x[n_d:].copy())


def feature_context(g: DirectedGraph, spec: FeatureSpec = None, continent_table=None):
    """Build the frozen FeatureContext for a loaded graph."""
    return FeatureContext(g.vertices, spec or FeatureSpec(), graph=g, continent_table=continent_table)


def _restrict_code(ctx: FeatureContext, restrict_src_country):
    if restrict_src_country is None:
        return None
    code = ctx.vertices.label_code("country", restrict_src_country)
    if code < 0:
        raise ConfigError(f"country {restrict_src_country!r} absent from the data")
    return code


def _source_list(ctx, code):
    n = ctx.vertices.n
    if ctx.spec.view == "directed" and code is not None:
        return np.nonzero(ctx.vertices.codes("country") == code)[0].astype(np.int64)
    return np.arange(n, dtype=np.int64)


def _dsts_for_src(ctx, i, code):
    n = ctx.vertices.n
    if ctx.spec.view == "directed":
        return np.concatenate([np.arange(i, dtype=np.int64), np.arange(i + 1, n, dtype=np.int64)])
    J = np.arange(i + 1, n, dtype=np.int64)
    if code is not None and ctx.vertices.codes("country")[i] != code:
        J = J[ctx.vertices.codes("country")[J] == code]
    return J


def dyad_count(ctx: FeatureContext, restrict_src_country=None):
    """Number of dyads one epoch of the stream yields."""
    code = _restrict_code(ctx, restrict_src_country)
    n = ctx.vertices.n
    if ctx.spec.view == "directed":
        n_src = n if code is None else int((ctx.vertices.codes("country") == code).sum())
        return n_src * (n - 1)
    if code is None:
        return n * (n - 1) // 2
    out = n - int((ctx.vertices.codes("country") == code).sum())
    return n * (n - 1) // 2 - out * (out - 1) // 2


def iter_index_blocks(ctx: FeatureContext, restrict_src_country=None, order="deterministic",
                      seed=None, block_rows=_BLOCK_ROWS):
    """Yield (I, J) index blocks covering each qualifying dyad exactly once.

    Memory is bounded by the block size (plus one source row set), never by
    the dyad count. ``order="shuffled"`` permutes sources and, within each
    source, destinations, using the given seed.
    """
    if order not in ("deterministic", "shuffled"):
        raise ConfigError(f"bad order {order!r}")
    code = _restrict_code(ctx, restrict_src_country)
    srcs = _source_list(ctx, code)
    rng = None
    if order == "shuffled":
        if seed is None:
            raise ConfigError("shuffled order needs a seed")
        rng = np.random.default_rng(seed)
        srcs = srcs[rng.permutation(srcs.size)]

    buf_I, buf_J, buffered = [], [], 0
    for i in srcs:
        J = _dsts_for_src(ctx, int(i), code)
        if J.size == 0:
            continue
        if rng is not None:
            J = J[rng.permutation(J.size)]
        buf_I.append(np.full(J.size, i, dtype=np.int64))
        buf_J.append(J)
        buffered += J.size
        if buffered >= block_rows:
            yield np.concatenate(buf_I), np.concatenate(buf_J)
            buf_I, buf_J, buffered = [], [], 0
    if buffered:
        yield np.concatenate(buf_I), np.concatenate(buf_J)


def iter_design_blocks(ctx: FeatureContext, restrict_src_country=None, order="deterministic",
                       seed=None, block_rows=_BLOCK_ROWS, with_indices=False):
    """Yield (x, w) design blocks for each qualifying dyad, block by block."""
    for I, J in iter_index_blocks(ctx, restrict_src_country, order, seed, block_rows):
        x = ctx.design_pairs(I, J)
        w = ctx.outcomes(I, J)
        if with_indices:
            yield I, J, x, w
        else:
            yield x, w


class BlockSource:
    """Re-iterable, epoch-indexed dyad block stream for the fitters.

    Epoch e reshuffles with seed + e, so reruns with the same seed replay
    the identical dyad order.
    """

    def __init__(self, ctx: FeatureContext, restrict_src_country=None, order="shuffled",
                 seed=0, block_rows=_BLOCK_ROWS):
        self.ctx = ctx
        self.restrict_src_country = restrict_src_country
        self.order = order
        self.seed = seed
        self.block_rows = block_rows

    def _seed(self, epoch):
        return None if self.order == "deterministic" else self.seed + epoch

    def index_blocks(self, epoch):
        return iter_index_blocks(
            self.ctx, self.restrict_src_country, self.order, self._seed(epoch), self.block_rows)

    def design_blocks(self, epoch):
        return iter_design_blocks(
            self.ctx, self.restrict_src_country, self.order, self._seed(epoch), self.block_rows)

    def count(self):
        return dyad_count(self.ctx, self.restrict_src_country)


def dyad_stream(ctx: FeatureContext, restrict_src_country=None, order="deterministic", seed=None):
    """Yield one DyadRow per qualifying dyad. Row-level view of the blocks."""
    n_d = ctx.manifest.n_d
    for I, J, x, w in iter_design_blocks(ctx, restrict_src_country, order, seed, with_indices=True):
        for k in range(I.size):
            yield DyadRow(src=int(I[k]), dst=int(J[k]), w=int(w[k]), d=x[k, :n_d].copy(), x=x[k, n_d:].copy())


def mean_design_row(ctx: FeatureContext, restrict_src_country=None):
    """Streaming mean of the design row over the dyad population."""
    total = np.zeros(ctx.width)
    count = 0
    for x, _ in iter_design_blocks(ctx, restrict_src_country):
        total += x.sum(axis=0)
        count += x.shape[0]
    if count == 0:
        raise DomainError("empty dyad stream")
    return total / count
