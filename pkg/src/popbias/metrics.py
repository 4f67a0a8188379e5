"""Popularity-bias metrics for top-k recommenders.

Every metric compares the aggregate popularity of a recommendation profile
``r`` against a user profile ``u``, given raw per-item popularity scores
``phi``. A metric is a (transform g, aggregation h, comparison M) triple:

=================  ===========  ==============  ===================
metric             transform g  aggregation h   comparison M
=================  ===========  ==============  ===================
log_pop_diff       log          mean            difference
avg_pop_lift       identity     mean            relative difference
gini_diff          share        gini            difference
herfindahl_diff    share        sum of squares  difference
pru                rank         identity        correlation
=================  ===========  ==============  ===================

Profiles are multisets: duplicate items count with multiplicity. All
functions are pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Profile",
    "MetricDefinition",
    "METRICS",
    "profile_scores",
    "log_pop_difference",
    "avg_pop_lift",
    "gini_coefficient",
    "gini_profile",
    "gini_diff",
    "herfindahl_index",
    "herfindahl_profile",
    "herfindahl_diff",
    "spearman_rho",
    "kendall_tau",
    "pru",
    "evaluate_metric",
    "running_mean_trace",
]


@dataclass(frozen=True)
class Profile:
    """An item multiset: a recommendation slate or a user's history.

    When ``ranked`` is true the item order encodes the recommender's
    ranking, position 1 being the top slot.
    """

    items: tuple[int, ...]
    ranked: bool = False

    def __post_init__(self) -> None:
        if not self.items:
            raise ValueError("profile must contain at least one item")

    @classmethod
    def of(cls, items: Sequence[int], ranked: bool = False) -> "Profile":
        return cls(items=tuple(items), ranked=ranked)


@dataclass(frozen=True)
class MetricDefinition:
    """One row of the metric family: id plus its (g, h, M) triple."""

    id: str
    transform: str
    aggregation: str
    comparison: str


METRICS: dict[str, MetricDefinition] = {
    "log_pop_diff": MetricDefinition("log_pop_diff", "log", "mean", "difference"),
    "avg_pop_lift": MetricDefinition(
        "avg_pop_lift", "identity", "mean", "relative-difference"
    ),
    "gini_diff": MetricDefinition("gini_diff", "share", "gini", "difference"),
    "herfindahl_diff": MetricDefinition(
        "herfindahl_diff", "share", "sum-of-squares", "difference"
    ),
    "pru": MetricDefinition("pru", "rank", "identity", "correlation"),
}


def profile_scores(p: Profile, phi: Mapping[int, float]) -> np.ndarray:
    """Look up the raw popularity score of every profile item, in order."""
    try:
        return np.array([phi[a] for a in p.items], dtype=float)
    except KeyError as exc:
        raise ValueError(f"item {exc.args[0]} missing from popularity table") from None


def log_pop_difference(r: Profile, u: Profile, phi: Mapping[int, float]) -> float:
    """Mean natural-log popularity of ``r`` minus that of ``u``.

    Scores must be >= 1 (rating counts), keeping the log non-negative.
    """
    rs = profile_scores(r, phi)
    us = profile_scores(u, phi)
    for scores, which in ((rs, "recommendation"), (us, "user")):
        if np.any(scores < 1.0):
            bad = scores[scores < 1.0][0]
            raise ValueError(f"{which} profile has score {bad} < 1 (log domain)")
    return float(np.mean(np.log(rs)) - np.mean(np.log(us)))


def avg_pop_lift(r: Profile, u: Profile, phi: Mapping[int, float]) -> float:
    """Relative lift of mean raw popularity: (AP(r) - AP(u)) / AP(u)."""
    ap_r = float(np.mean(profile_scores(r, phi)))
    ap_u = float(np.mean(profile_scores(u, phi)))
    if ap_u == 0.0:
        raise ValueError("average popularity of the user profile is zero")
    return (ap_r - ap_u) / ap_u


def gini_coefficient(scores: Sequence[float]) -> float:
    """Gini inequality of a set of positive scores, in [0, 1)."""
    x = np.sort(np.asarray(scores, dtype=float))
    if x.size == 0:
        raise ValueError("empty score list")
    if np.any(x <= 0):
        raise ValueError("scores must be positive")
    n = x.size
    i = np.arange(1, n + 1)
    return float(np.sum((2 * i - n - 1) / n * x / x.sum()))


def gini_profile(p: Profile, phi: Mapping[int, float]) -> float:
    return gini_coefficient(profile_scores(p, phi))


def gini_diff(r: Profile, u: Profile, phi: Mapping[int, float]) -> float:
    """Gini(r) - Gini(u): inequality of recommended vs consumed popularity."""
    return gini_profile(r, phi) - gini_profile(u, phi)


def herfindahl_index(scores: Sequence[float]) -> float:
    """Concentration of a set of positive scores: sum of squared shares."""
    x = np.asarray(scores, dtype=float)
    if x.size == 0:
        raise ValueError("empty score list")
    if np.any(x <= 0):
        raise ValueError("scores must be positive")
    shares = x / x.sum()
    return float(np.sum(shares * shares))


def herfindahl_profile(p: Profile, phi: Mapping[int, float]) -> float:
    return herfindahl_index(profile_scores(p, phi))


def herfindahl_diff(r: Profile, u: Profile, phi: Mapping[int, float]) -> float:
    return herfindahl_profile(r, phi) - herfindahl_profile(u, phi)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values receive the mean of their rank range."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=float)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size != y.size:
        raise ValueError("sequences must have equal length")
    if x.size < 2:
        raise ValueError("undefined correlation: need at least 2 observations")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(np.sum(rx * rx)) * float(np.sum(ry * ry)))
    if denom == 0.0:
        raise ValueError("undefined correlation: zero rank variance")
    return float(np.sum(rx * ry) / denom)


def kendall_tau(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Kendall rank correlation with tau-b tie handling."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size != y.size:
        raise ValueError("sequences must have equal length")
    n = x.size
    if n < 2:
        raise ValueError("undefined correlation: need at least 2 observations")
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    prod = sx[iu] * sy[iu]
    concordant = float(np.sum(prod > 0))
    discordant = float(np.sum(prod < 0))
    n0 = n * (n - 1) / 2.0
    ties_x = n0 - float(np.sum(sx[iu] != 0))
    ties_y = n0 - float(np.sum(sy[iu] != 0))
    denom = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0.0:
        raise ValueError("undefined correlation: constant sequence")
    return (concordant - discordant) / denom


def pru(r: Profile, u: Profile, phi: Mapping[int, float]) -> float:
    """Popularity-rank correlation over the profile intersection.

    Correlates each shared item's popularity with an alignment score
    ``k + 1 - position_r``, so +1 means the most popular items occupy the
    recommender's top slots.
    """
    if not r.ranked:
        raise ValueError("PRU requires a rank-ordered recommendation profile")
    u_items = set(u.items)
    seen: dict[int, int] = {}
    for pos, a in enumerate(r.items, start=1):
        if a in u_items and a not in seen:
            seen[a] = pos
    if len(seen) < 2:
        raise ValueError("PRU undefined: profile intersection has fewer than 2 items")
    k = len(r.items)
    shared = list(seen)
    scores = profile_scores(Profile.of(shared), phi)
    alignment = [k + 1 - seen[a] for a in shared]
    return spearman_rho(scores, alignment)


_METRIC_FUNCS = {
    "log_pop_diff": log_pop_difference,
    "avg_pop_lift": avg_pop_lift,
    "gini_diff": gini_diff,
    "herfindahl_diff": herfindahl_diff,
    "pru": pru,
}


def evaluate_metric(
    metric_id: str, r: Profile, u: Profile, phi: Mapping[int, float]
) -> float:
    """Evaluate one registered metric by id."""
    try:
        fn = _METRIC_FUNCS[metric_id]
    except KeyError:
        known = ", ".join(sorted(_METRIC_FUNCS))
        raise ValueError(f"unknown metric {metric_id!r} (known: {known})") from None
    return fn(r, u, phi)


def running_mean_trace(
    scores: Sequence[float], transform: str = "identity"
) -> np.ndarray:
    """Prefix means of (optionally log-transformed) scores.

    The identity trace of heavy-tailed scores jumps whenever a dominant
    element enters; the log trace settles. Used to demonstrate statistical
    well-behavedness of the log transform.
    """
    x = np.asarray(scores, dtype=float)
    if x.size == 0:
        raise ValueError("empty score list")
    if transform == "log":
        if np.any(x <= 0):
            raise ValueError("log transform requires positive scores")
        x = np.log(x)
    elif transform != "identity":
        raise ValueError(f"unknown transform {transform!r}")
    return np.cumsum(x) / np.arange(1, x.size + 1)
