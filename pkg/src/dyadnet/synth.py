"""Synthetic networks with known coefficients, geography, and fixed effects.

The generator inverts the link-formation model: it draws vertex attributes
around per-country centroids, builds the same design rows the estimators
use, and links each ordered pair independently with the logistic
probability of its planted linear predictor (plus optional per-vertex
sender/receiver effects). Everything is driven by one seed; regenerating
with the same config is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit
from scipy.stats import zipf as _zipf

from .errors import ConfigError, DomainError
from .features import FeatureContext, FeatureSpec
from .graph import ACTIVITY_COLUMNS, UNKNOWN, DirectedGraph, VertexTable

KM_PER_DEG = 111.19492664455873  # pi * 6371.0088 / 180

# (mean, sd, max) targets per activity counter; lognormal moment matching.
_ACTIVITY_CALIBRATION = {
    "feed_posts_made_v4": (0.63, 53.77, 5872),
    "feed_posts_made_v5": (7.55, 49.70, 1996),
    "feed_posts_made_v6": (14.11, 70.64, 2744),
    "feed_posts_liked_commented_v4": (44.94, 1101.46, 84481),
    "feed_posts_liked_commented_v5": (789.14, 4130.66, 116539),
    "feed_posts_liked_commented_v6": (1079.40, 4214.73, 205533),
    "stories_read_from_feed_v4": (0.05, 0.83, 56),
    "stories_read_from_feed_v5": (47.40, 228.67, 10625),
    "stories_read_from_feed_v6": (64.41, 240.61, 14292),
    "chat_messages_sent_v4": (365.88, 2498.43, 87302),
    "chat_messages_sent_v5": (5047.41, 11383.11, 175948),
    "chat_messages_sent_v6": (6181.82, 8414.75, 116155),
    "total_followees_v4": (50.51, 525.83, 22546),
    "total_followees_v5": (842.16, 3080.15, 167086),
    "total_followees_v6": (1166.10, 1656.27, 49161),
    "total_followers": (70.21, 97.15, 1618),
    "total_followees": (70.21, 115.53, 4243),
}

_ETHNICITIES = ("asian", "white", "mixed", "other")
_ETHNICITY_SHARES = (0.4786, 0.2440, 0.0747, 0.2027)


@dataclass(frozen=True)
class CountrySpec:
    """One synthetic country: population share, centroid, spatial spread."""

    code: str
    share: float
    lat: float
    lon: float
    dispersion_km: float
    language: str = None
    n_regions: int = 4
    cities_per_region: int = 3

    def __post_init__(self):
        if self.dispersion_km <= 0:
            raise ConfigError(f"dispersion for {self.code} must be positive")
        if self.language is None:
            object.__setattr__(self, "language", f"lang_{self.code}")


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings: population, planted coefficients, fixed effects.

    ``beta`` maps design-column names (from the FeatureSpec manifest) to
    planted values; unnamed columns are zero. ``beta_by_src_country``
    optionally overrides entries per sender country.
    """

    n: int
    countries: tuple
    beta: dict
    spec: FeatureSpec = field(default_factory=lambda: FeatureSpec(popularity="none", activity="none"))
    alpha_sd_out: float = 0.0
    alpha_sd_in: float = 0.0
    seed: int = 0
    beta_by_src_country: dict = None

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError("need at least 2 vertices")
        shares = [c.share for c in self.countries]
        if not self.countries or abs(sum(shares) - 1.0) > 1e-9:
            raise ConfigError("country shares must sum to 1")
        if self.spec.popularity != "none":
            raise ConfigError("the generator cannot plant popularity features; set popularity='none'")
        object.__setattr__(self, "countries", tuple(self.countries))

    def to_dict(self):
        d = {
            "n": self.n,
            "countries": [
                {"code": c.code, "share": c.share, "lat": c.lat, "lon": c.lon,
                 "dispersion_km": c.dispersion_km, "language": c.language}
                for c in self.countries
            ],
            "beta": dict(self.beta),
            "spec": self.spec.to_dict(),
            "alpha_sd_out": self.alpha_sd_out,
            "alpha_sd_in": self.alpha_sd_in,
            "seed": self.seed,
        }
        if self.beta_by_src_country:
            d["beta_by_src_country"] = {k: dict(v) for k, v in self.beta_by_src_country.items()}
        return d


@dataclass
class SynthTruth:
    """Realized graph plus everything needed to score the estimators."""

    graph: DirectedGraph
    beta: np.ndarray
    names: tuple
    alpha_out: np.ndarray
    alpha_in: np.ndarray
    manifest: object
    config: SynthConfig

    def beta_of(self, name):
        return float(self.beta[self.names.index(name)])


def beta_vector(manifest, beta_map):
    """Dense coefficient vector aligned to the manifest from a name map."""
    vec = np.zeros(manifest.width)
    for name, value in beta_map.items():
        if name not in manifest.names:
            raise ConfigError(f"unknown coefficient name {name!r}; valid: {list(manifest.names)}")
        vec[manifest.index_of(name)] = float(value)
    return vec


def _intern(values):
    labels = [UNKNOWN]
    lookup = {UNKNOWN: 0}
    codes = np.empty(len(values), dtype=np.int32)
    for k, v in enumerate(values):
        if v not in lookup:
            lookup[v] = len(labels)
            labels.append(v)
        codes[k] = lookup[v]
    return codes, labels


def _draw_activity(rng, col, n):
    mean, sd, vmax = _ACTIVITY_CALIBRATION[col]
    sigma2 = np.log1p((sd / mean) ** 2)
    mu = np.log(mean) - sigma2 / 2.0
    draws = np.expm1(rng.normal(mu, np.sqrt(sigma2), size=n))
    return np.clip(np.round(draws), 0, vmax)


def _draw_vertices(cfg: SynthConfig, rng) -> VertexTable:
    n = cfg.n
    # Largest-remainder country counts, then a seeded shuffle.
    shares = np.array([c.share for c in cfg.countries])
    counts = np.floor(shares * n).astype(int)
    remainder = shares * n - counts
    for k in np.argsort(-remainder)[: n - counts.sum()]:
        counts[k] += 1
    assignment = np.repeat(np.arange(len(cfg.countries)), counts)
    assignment = assignment[rng.permutation(n)]

    lat = np.empty(n)
    lon = np.empty(n)
    country, region, city, language = [], [], [], []
    languages = [c.language for c in cfg.countries]
    for i in range(n):
        c = cfg.countries[assignment[i]]
        dy, dx = rng.normal(0.0, c.dispersion_km, size=2)
        lat[i] = np.clip(c.lat + dy / KM_PER_DEG, -89.99, 89.99)
        raw = c.lon + dx / (KM_PER_DEG * np.cos(np.radians(c.lat)))
        wrapped = (raw + 180.0) % 360.0 - 180.0
        lon[i] = 180.0 if wrapped == -180.0 else wrapped
        country.append(c.code)
        r = rng.integers(c.n_regions)
        region.append(f"{c.code}_r{r}")
        city.append(f"{c.code}_r{r}_c{rng.integers(c.cities_per_region)}")
        language.append(c.language if rng.random() < 0.85 else languages[rng.integers(len(languages))])

    numeric = {
        "platform": (rng.random(n) < 0.25).astype(np.float64),
        "age": np.clip(rng.normal(30.25, 9.95, n), 18, 99).round(1),
        "height_cm": np.clip(rng.normal(172.0, 10.0, n), 91, 200).round(1),
        "weight_kg": np.clip(rng.normal(70.8, 14.2, n), 27, 293).round(1),
    }
    for col in ACTIVITY_COLUMNS:
        numeric[col] = _draw_activity(rng, col, n)

    ethnicity = [
        _ETHNICITIES[k]
        for k in rng.choice(len(_ETHNICITIES), size=n, p=np.asarray(_ETHNICITY_SHARES) / sum(_ETHNICITY_SHARES))
    ]

    cat_codes, cat_labels = {}, {}
    for name, vals in (("country", country), ("region", region), ("city", city),
                       ("ethnicity", ethnicity), ("language", language)):
        codes, labels = _intern(vals)
        cat_codes[name] = codes
        cat_labels[name] = labels

    return VertexTable(np.arange(n, dtype=np.int64), lat, lon, cat_codes, cat_labels, numeric)


def generate(cfg: SynthConfig) -> SynthTruth:
    """Draw a synthetic network from the planted model.

    Sender i links to receiver j with probability
    logistic(x_ij . beta + alpha_out[i] + alpha_in[j]); edge draws consume
    one RNG stream in fixed (i, j) order. When the spec view is "mutual"
    the realized directed draws are symmetrized by intersection afterward.
    """
    ss = np.random.SeedSequence(cfg.seed)
    rng_attr, rng_alpha, rng_edge = (np.random.default_rng(s) for s in ss.spawn(3))

    vertices = _draw_vertices(cfg, rng_attr)
    ctx = FeatureContext(vertices, cfg.spec, graph=None)
    base_beta = beta_vector(ctx.manifest, cfg.beta)

    n = cfg.n
    alpha_out = rng_alpha.normal(0.0, cfg.alpha_sd_out, n) if cfg.alpha_sd_out > 0 else np.zeros(n)
    alpha_in = rng_alpha.normal(0.0, cfg.alpha_sd_in, n) if cfg.alpha_sd_in > 0 else np.zeros(n)

    per_country = None
    if cfg.beta_by_src_country:
        per_country = {}
        for code, overrides in cfg.beta_by_src_country.items():
            merged = dict(cfg.beta)
            merged.update(overrides)
            per_country[code] = beta_vector(ctx.manifest, merged)

    country_codes = vertices.codes("country")
    country_labels = vertices.labels("country")

    src_parts, dst_parts = [], []
    for i in range(n):
        J = np.concatenate([np.arange(i, dtype=np.int64), np.arange(i + 1, n, dtype=np.int64)])
        x = ctx.design_pairs(np.full(n - 1, i, dtype=np.int64), J)
        beta_i = base_beta
        if per_country is not None:
            beta_i = per_country.get(country_labels[country_codes[i]], base_beta)
        eta = x @ beta_i + alpha_out[i] + alpha_in[J]
        hit = rng_edge.random(n - 1) < expit(eta)
        if hit.any():
            src_parts.append(np.full(int(hit.sum()), i, dtype=np.int64))
            dst_parts.append(J[hit])

    src = np.concatenate(src_parts) if src_parts else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dst_parts) if dst_parts else np.zeros(0, dtype=np.int64)
    graph = DirectedGraph(vertices, src, dst)
    if cfg.spec.view == "mutual":
        graph = graph.mutual_view()

    return SynthTruth(
        graph=graph,
        beta=base_beta,
        names=ctx.manifest.names,
        alpha_out=alpha_out,
        alpha_in=alpha_in,
        manifest=ctx.manifest,
        config=cfg,
    )


def planted_probabilities(truth: SynthTruth, I, J):
    """Planted link probabilities for ordered pairs, for calibration checks."""
    cfg = truth.config
    ctx = FeatureContext(truth.graph.vertices, cfg.spec, graph=None)
    x = ctx.design_pairs(I, J)
    I = np.asarray(I, dtype=np.int64)
    J = np.asarray(J, dtype=np.int64)
    if cfg.beta_by_src_country:
        labels = truth.graph.vertices.labels("country")
        codes = truth.graph.vertices.codes("country")
        eta = np.empty(x.shape[0])
        for k in range(x.shape[0]):
            merged = dict(cfg.beta)
            merged.update(cfg.beta_by_src_country.get(labels[codes[I[k]]], {}))
            eta[k] = x[k] @ beta_vector(ctx.manifest, merged)
    else:
        eta = x @ truth.beta
    return expit(eta + truth.alpha_out[I] + truth.alpha_in[J])


def plant_distance_decay(cfg: SynthConfig, bin_betas) -> SynthConfig:
    """Config whose distance-bin coefficients equal ``bin_betas``."""
    names = cfg.spec.bin_scheme.indicator_names
    if len(bin_betas) != len(names):
        raise ConfigError(f"expected {len(names)} bin coefficients, got {len(bin_betas)}")
    if not cfg.spec.distance_bins:
        raise ConfigError("distance bins are disabled in the feature spec")
    beta = dict(cfg.beta)
    for name, value in zip(names, bin_betas):
        beta[name] = float(value)
    return replace(cfg, beta=beta)


def zipf_degrees(n, lam, seed, d_max=None):
    """IID draws from a discrete power law over d >= 1.

    With ``d_max`` the mass function is normalized over [1, d_max]; without
    it the support is unbounded, which requires lam > 1.
    """
    if n < 1:
        raise ConfigError("need n >= 1 draws")
    rng = np.random.default_rng(seed)
    if d_max is None:
        if lam <= 1:
            raise ConfigError("unbounded support needs lam > 1")
        return np.asarray(_zipf.rvs(lam, size=n, random_state=rng), dtype=np.int64)
    d = np.arange(1, int(d_max) + 1, dtype=np.float64)
    pmf = d ** (-float(lam))
    cdf = np.cumsum(pmf / pmf.sum())
    return (np.searchsorted(cdf, rng.random(n), side="right") + 1).astype(np.int64)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_vertex_file(vertices: VertexTable, path, delimiter=","):
    """Write the standard vertex file (full schema, UTF-8, header row)."""
    from .graph import VERTEX_SCHEMA

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(VERTEX_SCHEMA) + "\n")
        for i in range(vertices.n):
            row = [str(int(vertices.ids[i])), repr(float(vertices.lat[i])), repr(float(vertices.lon[i]))]
            for col in ("country", "region", "city"):
                label = vertices.decode(col, vertices.codes(col)[i])
                row.append("" if label == UNKNOWN else label)
            for col in ("platform", "age", "height_cm", "weight_kg"):
                row.append(_fmt(float(vertices.numeric(col)[i])))
            for col in ("ethnicity", "language"):
                label = vertices.decode(col, vertices.codes(col)[i])
                row.append("" if label == UNKNOWN else label)
            for col in ACTIVITY_COLUMNS:
                row.append(str(int(vertices.numeric(col)[i])))
            fh.write(delimiter.join(row) + "\n")


def write_edge_file(graph: DirectedGraph, path, delimiter=","):
    ids = graph.vertices.ids
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"src{delimiter}dst\n")
        for a, b in zip(graph.src, graph.dst):
            fh.write(f"{ids[a]}{delimiter}{ids[b]}\n")


def write_truth_file(truth: SynthTruth, path):
    """Truth manifest: planted coefficients, alphas, seed, generator config."""
    payload = {
        "beta": {name: float(v) for name, v in zip(truth.names, truth.beta)},
        "alpha_out": [float(a) for a in truth.alpha_out],
        "alpha_in": [float(a) for a in truth.alpha_in],
        "seed": truth.config.seed,
        "config": truth.config.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
