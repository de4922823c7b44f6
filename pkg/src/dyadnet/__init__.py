"""Dyadic link-formation models on directed social graphs.

Estimates how geographic proximity and homophily shape follow decisions:
streaming out-of-core logistic fits over every ordered pair, tetrad
conditional logit that differences out per-user sender/receiver effects,
descriptive network statistics, and a synthetic generator with planted
coefficients for end-to-end validation.
"""

from .errors import (
    ConfigError,
    DataError,
    DomainError,
    DyadnetError,
    EmptyTetradError,
    IdentificationError,
    IntegrityError,
    NumericalError,
    OptimizationError,
    ParseError,
    RankDeficiencyError,
    SeparationError,
    SeparationWarning,
)
from .estimator import (
    FitResult,
    OptimizerConfig,
    fit_by_country,
    fit_newton,
    fit_streaming,
    loglik_and_gradient,
    marginal_effects_at_mean,
    standard_errors,
)
from .features import (
    BlockSource,
    CountryPopularity,
    DyadRow,
    FeatureContext,
    FeatureSpec,
    dyad_count,
    dyad_stream,
    feature_context,
    mean_design_row,
    popularity_index,
    standardize_stats,
)
from .geo import DistanceBinScheme, bin_distance, bin_indicators, haversine_km
from .graph import (
    DirectedGraph,
    VertexTable,
    density,
    in_degrees,
    load_edges,
    load_vertices,
    mutual_view,
)
from .netstats import (
    DistanceHistogram,
    PowerLawFit,
    country_follow_matrix,
    distance_histogram,
    fit_power_law,
    neighbor_avg_in_degree,
    summary_table,
)
from .synth import (
    CountrySpec,
    SynthConfig,
    SynthTruth,
    generate,
    plant_distance_decay,
    zipf_degrees,
)
from .tetrad import (
    FixedEffects,
    TetradSample,
    TetradSet,
    bootstrap_se,
    compare_fits,
    conditional_prob,
    enumerate_tetrads,
    fit_tetrad,
)

__version__ = "0.1.0"
