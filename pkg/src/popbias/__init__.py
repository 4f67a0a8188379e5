"""Popularity-bias metrics and an offline top-k recommender evaluation harness."""

__version__ = "0.1.0"

from popbias.catalog import (
    CatalogEntry,
    Interaction,
    PopularityTable,
    TitleIndex,
    compute_popularity,
    normalize_title,
    parse_movies,
    parse_ratings,
)
from popbias.metrics import (
    METRICS,
    MetricDefinition,
    Profile,
    avg_pop_lift,
    gini_diff,
    gini_profile,
    herfindahl_diff,
    herfindahl_profile,
    kendall_tau,
    log_pop_difference,
    pru,
    running_mean_trace,
    spearman_rho,
)

__all__ = [
    "CatalogEntry",
    "Interaction",
    "PopularityTable",
    "TitleIndex",
    "compute_popularity",
    "normalize_title",
    "parse_movies",
    "parse_ratings",
    "METRICS",
    "MetricDefinition",
    "Profile",
    "avg_pop_lift",
    "gini_diff",
    "gini_profile",
    "herfindahl_diff",
    "herfindahl_profile",
    "kendall_tau",
    "log_pop_difference",
    "pru",
    "running_mean_trace",
    "spearman_rho",
]
