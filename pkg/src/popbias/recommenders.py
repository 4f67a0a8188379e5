"""Baseline top-k recommenders: random, top-popularity, item-KNN, user-KNN.

Both KNN variants use cosine similarity over mean-centered ratings (each
rating centered by its user's mean) and keep only the top-K positive
neighbors per entity. Ties anywhere break by ascending id so runs are
reproducible. Built models are immutable; recommend calls are thread-safe.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from popbias.catalog import Interaction

__all__ = [
    "RatingMatrix",
    "KnnModel",
    "Slate",
    "RecRequest",
    "RecResult",
    "BaseRecommender",
    "RandomRecommender",
    "TopPopRecommender",
    "ItemKnnRecommender",
    "UserKnnRecommender",
    "recommend_random",
    "recommend_top_pop",
    "build_item_knn",
    "recommend_item_knn",
    "build_user_knn",
    "recommend_user_knn",
]

DEFAULT_K_NEIGHBORS = 30
_BLOCK = 1024


@dataclass(frozen=True)
class Slate:
    """Ordered top-k recommendation; may be shorter than requested_k."""

    entries: tuple[int, ...]
    requested_k: int

    def __post_init__(self) -> None:
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("slate contains duplicate items")
        if self.requested_k < 0:
            raise ValueError("requested_k must be non-negative")

    def __len__(self) -> int:
        return len(self.entries)


class RatingMatrix:
    """User-item ratings with per-user means and both-way lookups.

    Duplicate (user, item) pairs keep the last rating seen.
    """

    def __init__(self, ratings: Mapping[tuple[int, int], float]):
        if not ratings:
            raise ValueError("rating matrix is empty")
        self.users = sorted({u for u, _ in ratings})
        self.items = sorted({i for _, i in ratings})
        self.user_index = {u: n for n, u in enumerate(self.users)}
        self.item_index = {i: n for n, i in enumerate(self.items)}
        rows = np.fromiter((self.user_index[u] for u, _ in ratings), dtype=np.int64)
        cols = np.fromiter((self.item_index[i] for _, i in ratings), dtype=np.int64)
        vals = np.fromiter(ratings.values(), dtype=float)
        self.csr = sparse.csr_matrix(
            (vals, (rows, cols)), shape=(len(self.users), len(self.items))
        )
        counts = np.diff(self.csr.indptr)
        sums = np.asarray(self.csr.sum(axis=1)).ravel()
        self.user_means = np.divide(
            sums, counts, out=np.zeros_like(sums), where=counts > 0
        )

    @classmethod
    def from_interactions(cls, interactions: Iterable[Interaction]) -> "RatingMatrix":
        ratings: dict[tuple[int, int], float] = {}
        for it in interactions:
            ratings[(it.user, it.item)] = it.rating
        return cls(ratings)

    def user_mean(self, user: int) -> float:
        return float(self.user_means[self.user_index[user]])

    def ratings_of(self, user: int) -> list[tuple[int, float]]:
        row = self.csr.getrow(self.user_index[user])
        return [(self.items[j], float(v)) for j, v in zip(row.indices, row.data)]

    def items_of(self, user: int) -> set[int]:
        row = self.csr.getrow(self.user_index[user])
        return {self.items[j] for j in row.indices}

    def centered(self) -> sparse.csr_matrix:
        """Ratings with each user's mean subtracted from their entries."""
        centered = self.csr.tocoo(copy=True)
        centered.data = centered.data - self.user_means[centered.row]
        return centered.tocsr()


@dataclass(frozen=True)
class KnnModel:
    """Top-K positive-similarity neighbor lists, plus a reverse index."""

    mode: str  # "item" or "user"
    k_neighbors: int
    neighbors: dict[int, tuple[tuple[int, float], ...]]
    reverse: dict[int, tuple[tuple[int, float], ...]] = field(repr=False, default_factory=dict)


def recommend_random(
    candidates: Iterable[int], exclude: Iterable[int], k: int, seed: int | Sequence[int]
) -> Slate:
    """k distinct items drawn uniformly from candidates minus exclusions."""
    pool = sorted(set(candidates) - set(exclude))
    if len(pool) < k:
        raise ValueError(f"only {len(pool)} candidates available for k={k}")
    if k == 0:
        return Slate(entries=(), requested_k=0)
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=k, replace=False)
    return Slate(entries=tuple(pool[i] for i in picks), requested_k=k)


def recommend_top_pop(
    phi: Mapping[int, float], exclude: Iterable[int], k: int
) -> Slate:
    """The k most popular unexcluded items, score ties broken by item id."""
    excluded = set(exclude)
    ranked = sorted(
        ((item, score) for item, score in phi.items() if item not in excluded),
        key=lambda pair: (-pair[1], pair[0]),
    )
    if len(ranked) < k:
        raise ValueError(f"only {len(ranked)} items available for k={k}")
    return Slate(entries=tuple(item for item, _ in ranked[:k]), requested_k=k)


def _top_k_neighbors(
    sims: np.ndarray, ids: Sequence[int], self_pos: int, k: int
) -> tuple[tuple[int, float], ...]:
    sims = sims.copy()
    sims[self_pos] = 0.0
    positive = np.nonzero(sims > 0.0)[0]
    if positive.size == 0:
        return ()
    order = np.lexsort((positive, -sims[positive]))[:k]
    return tuple((ids[positive[i]], float(sims[positive[i]])) for i in order)


def _build_reverse(
    neighbors: dict[int, tuple[tuple[int, float], ...]]
) -> dict[int, tuple[tuple[int, float], ...]]:
    rev: dict[int, list[tuple[int, float]]] = {}
    for entity, neigh in neighbors.items():
        for other, sim in neigh:
            rev.setdefault(other, []).append((entity, sim))
    return {key: tuple(vals) for key, vals in rev.items()}


def build_item_knn(matrix: RatingMatrix, k_neighbors: int = DEFAULT_K_NEIGHBORS) -> KnnModel:
    """Cosine similarity between item columns of the centered matrix."""
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be >= 1")
    centered = matrix.centered()
    norms = np.sqrt(np.asarray(centered.multiply(centered).sum(axis=0)).ravel())
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    normalized = centered @ sparse.diags(inv)
    normalized_t = normalized.T.tocsr()
    n_items = len(matrix.items)
    neighbors: dict[int, tuple[tuple[int, float], ...]] = {}
    for start in range(0, n_items, _BLOCK):
        stop = min(start + _BLOCK, n_items)
        block = (normalized_t[start:stop] @ normalized).toarray()
        for offset in range(stop - start):
            item = matrix.items[start + offset]
            neighbors[item] = _top_k_neighbors(
                block[offset], matrix.items, start + offset, k_neighbors
            )
    return KnnModel(
        mode="item",
        k_neighbors=k_neighbors,
        neighbors=neighbors,
        reverse=_build_reverse(neighbors),
    )


def build_user_knn(matrix: RatingMatrix, k_neighbors: int = DEFAULT_K_NEIGHBORS) -> KnnModel:
    """Cosine similarity between user rows of the centered matrix."""
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be >= 1")
    centered = matrix.centered()
    norms = np.sqrt(np.asarray(centered.multiply(centered).sum(axis=1)).ravel())
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    normalized = sparse.diags(inv) @ centered
    n_users = len(matrix.users)
    neighbors: dict[int, tuple[tuple[int, float], ...]] = {}
    for start in range(0, n_users, _BLOCK):
        stop = min(start + _BLOCK, n_users)
        block = (normalized[start:stop] @ normalized.T).toarray()
        for offset in range(stop - start):
            user = matrix.users[start + offset]
            neighbors[user] = _top_k_neighbors(
                block[offset], matrix.users, start + offset, k_neighbors
            )
    return KnnModel(mode="user", k_neighbors=k_neighbors, neighbors=neighbors)


def _rank_scored(scores: dict[int, float], k: int) -> tuple[int, ...]:
    ranked = sorted(scores.items(), key=lambda pair: (-pair[1], pair[0]))
    return tuple(item for item, _ in ranked[:k])


def recommend_item_knn(
    model: KnnModel, profile: Sequence[tuple[int, float]], k: int
) -> Slate:
    """Score unseen items by similarity-weighted ratings of profile items.

    score(c) = sum(sim(c, j) * rating(j)) / sum(sim(c, j)) over profile
    items j in c's neighbor list. Candidates with no overlap are unscored,
    so the slate may come back short.
    """
    if model.mode != "item":
        raise ValueError("model is not item-based")
    if not profile:
        raise ValueError("profile must be non-empty")
    seen = {item for item, _ in profile}
    numerator: dict[int, float] = {}
    denominator: dict[int, float] = {}
    for j, rating in profile:
        for candidate, sim in model.reverse.get(j, ()):
            if candidate in seen:
                continue
            numerator[candidate] = numerator.get(candidate, 0.0) + sim * rating
            denominator[candidate] = denominator.get(candidate, 0.0) + abs(sim)
    scores = {c: numerator[c] / denominator[c] for c in numerator if denominator[c] > 0}
    return Slate(entries=_rank_scored(scores, k), requested_k=k)


def recommend_user_knn(
    model: KnnModel, matrix: RatingMatrix, user: int, k: int
) -> Slate:
    """Score unseen items from neighbors' mean-centered ratings.

    score(c) = mean(u) + sum(sim(u, v) * (rating_v(c) - mean(v))) /
    sum(|sim(u, v)|) over neighbors v who rated c. A user with no positive
    neighbors gets an empty slate.
    """
    if model.mode != "user":
        raise ValueError("model is not user-based")
    if user not in matrix.user_index:
        raise ValueError(f"user {user} not in rating matrix")
    seen = matrix.items_of(user)
    numerator: dict[int, float] = {}
    denominator: dict[int, float] = {}
    for v, sim in model.neighbors.get(user, ()):
        mean_v = matrix.user_mean(v)
        for item, rating in matrix.ratings_of(v):
            if item in seen:
                continue
            numerator[item] = numerator.get(item, 0.0) + sim * (rating - mean_v)
            denominator[item] = denominator.get(item, 0.0) + abs(sim)
    mean_u = matrix.user_mean(user)
    scores = {
        c: mean_u + numerator[c] / denominator[c]
        for c in numerator
        if denominator[c] > 0
    }
    return Slate(entries=_rank_scored(scores, k), requested_k=k)


@dataclass(frozen=True)
class RecRequest:
    """One user's recommendation request within an evaluation run."""

    user: int
    train: tuple[Interaction, ...]
    exclude: frozenset[int]


@dataclass(frozen=True)
class RecResult:
    slate: Slate
    unmatched: int = 0


class BaseRecommender:
    """Shared batch loop; subclasses implement single-request recommend."""

    name: str = "base"

    def recommend(self, request: RecRequest, k: int) -> RecResult:
        raise NotImplementedError

    def recommend_batch(self, requests: Sequence[RecRequest], k: int) -> list[RecResult]:
        return [self.recommend(request, k) for request in requests]


class RandomRecommender(BaseRecommender):
    name = "random"

    def __init__(self, candidates: Iterable[int], seed: int):
        self.candidates = frozenset(candidates)
        self.seed = seed

    def recommend(self, request: RecRequest, k: int) -> RecResult:
        # Seed derived per user so results are independent of batch order.
        slate = recommend_random(self.candidates, request.exclude, k, (self.seed, request.user))
        return RecResult(slate=slate)


class TopPopRecommender(BaseRecommender):
    name = "top_pop"

    def __init__(self, phi: Mapping[int, float]):
        self.phi = phi

    def recommend(self, request: RecRequest, k: int) -> RecResult:
        return RecResult(slate=recommend_top_pop(self.phi, request.exclude, k))


class ItemKnnRecommender(BaseRecommender):
    name = "item_knn"

    def __init__(self, model: KnnModel):
        self.model = model

    def recommend(self, request: RecRequest, k: int) -> RecResult:
        profile = [(it.item, it.rating) for it in request.train]
        return RecResult(slate=recommend_item_knn(self.model, profile, k))


class UserKnnRecommender(BaseRecommender):
    name = "user_knn"

    def __init__(self, model: KnnModel, matrix: RatingMatrix):
        self.model = model
        self.matrix = matrix

    def recommend(self, request: RecRequest, k: int) -> RecResult:
        return RecResult(slate=recommend_user_knn(self.model, self.matrix, request.user, k))
