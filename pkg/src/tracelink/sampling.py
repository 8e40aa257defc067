"""Negative sampling for link prediction training and evaluation.

Three regimes, picked by how imbalanced the implicit negative class is:

* none     - the data is already balanced; train on the given pairs as-is.
* simple   - uniform rejection sampling over ordered non-edges.
* advanced - sources drawn proportional to degree**alpha, destinations
             uniform, rejecting existing pairs, their reverses, and
             self-loops.  Biasing sources toward active nodes yields harder,
             more realistic negatives, while the small default alpha keeps
             low-degree nodes in play.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SamplingError
from .graph import WindowedGraph, degree_counts

DEFAULT_ALPHA = 0.1
DEFAULT_RETRY_FACTOR = 10
#: n_pos/n_neg at or above this counts as balanced: no sampling needed.
BALANCED_THRESHOLD = 0.8
MODERATE_THRESHOLD = 0.01


class SamplingKind(str, enum.Enum):
    NONE = "none"
    SIMPLE = "simple"
    ADVANCED = "advanced"


@dataclass(frozen=True)
class SamplingStrategy:
    """Chosen sampling regime; `alpha` accompanies the advanced kind only."""

    kind: SamplingKind
    alpha: float | None = None

    def __post_init__(self):
        if self.kind is SamplingKind.ADVANCED:
            if self.alpha is None:
                object.__setattr__(self, "alpha", DEFAULT_ALPHA)
            if not np.isfinite(self.alpha) or self.alpha < 0:
                raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha}")
        elif self.alpha is not None:
            raise ConfigError(f"alpha only applies to advanced sampling, not {self.kind.value}")


@dataclass(frozen=True)
class NegativeEdges:
    """Sampled non-edges: (k, 2) int array of ordered (src, dst) pairs."""

    pairs: np.ndarray

    @property
    def n_pairs(self) -> int:
        return int(self.pairs.shape[0])


def analyze_sampling(
    n_pos: int,
    n_nodes: int,
    *,
    balanced_threshold: float = BALANCED_THRESHOLD,
    moderate_threshold: float = MODERATE_THRESHOLD,
    alpha: float = DEFAULT_ALPHA,
) -> SamplingStrategy:
    """Pick a sampling regime from the positive/implicit-negative ratio.

    The implicit negative count is n_nodes*(n_nodes-1) - n_pos (every ordered
    non-self pair that is not a positive).  Ratios >= balanced_threshold need
    no sampling; ratios >= moderate_threshold get uniform sampling; rarer
    positives than that get the degree-weighted sampler.
    """
    if n_nodes < 2:
        raise ConfigError(f"need at least 2 nodes to sample pairs, got {n_nodes}")
    if n_pos < 0:
        raise ConfigError(f"positive count cannot be negative, got {n_pos}")
    implicit_neg = n_nodes * (n_nodes - 1) - n_pos
    if implicit_neg <= 0 or n_pos / implicit_neg >= balanced_threshold:
        return SamplingStrategy(SamplingKind.NONE)
    if n_pos / implicit_neg >= moderate_threshold:
        return SamplingStrategy(SamplingKind.SIMPLE)
    return SamplingStrategy(SamplingKind.ADVANCED, alpha)


def degree_source_distribution(degrees: np.ndarray, alpha: float) -> np.ndarray:
    """p(v) = d_v**alpha / sum_u d_u**alpha, with 0**0 defined as 1.

    alpha=0 therefore degenerates to the uniform distribution over all nodes,
    including isolated ones, while any alpha>0 gives isolated nodes weight 0.
    """
    if not np.isfinite(alpha) or alpha < 0:
        raise ConfigError(f"alpha must be finite and >= 0, got {alpha}")
    weights = np.asarray(degrees, dtype=np.float64) ** alpha
    total = weights.sum()
    if total <= 0:
        raise SamplingError("every node has zero weight; cannot draw sources")
    return weights / total


def _pair_codes(pairs: set[tuple[int, int]], n_nodes: int) -> np.ndarray:
    """Encode (src, dst) as src*n+dst for fast sorted membership tests."""
    if not pairs:
        return np.empty(0, dtype=np.int64)
    arr = np.fromiter((s * n_nodes + d for s, d in pairs), dtype=np.int64, count=len(pairs))
    arr.sort()
    return arr


def _member(sorted_codes: np.ndarray, queries: np.ndarray) -> np.ndarray:
    if sorted_codes.size == 0:
        return np.zeros(queries.shape, dtype=bool)
    idx = np.searchsorted(sorted_codes, queries)
    idx[idx == sorted_codes.size] = sorted_codes.size - 1
    return sorted_codes[idx] == queries


def simple_negative_sample(
    existing: set[tuple[int, int]],
    n_nodes: int,
    k: int,
    rng: np.random.Generator,
) -> NegativeEdges:
    """k uniform draws over ordered pairs that are neither existing edges nor
    self-loops.  Draws are independent, so duplicates can occur.
    """
    if n_nodes < 2:
        raise ConfigError(f"need at least 2 nodes to sample pairs, got {n_nodes}")
    if k < 0:
        raise ConfigError(f"cannot sample a negative number of pairs ({k})")
    room = n_nodes * (n_nodes - 1) - sum(1 for s, d in existing if s != d)
    if k > room:
        raise SamplingError(
            f"asked for {k} negatives but only {room} ordered non-edges exist"
        )
    ex_codes = _pair_codes(existing, n_nodes)
    out = np.empty((k, 2), dtype=np.int64)
    filled = 0
    while filled < k:
        need = k - filled
        src = rng.integers(0, n_nodes, size=need)
        dst = rng.integers(0, n_nodes, size=need)
        ok = (src != dst) & ~_member(ex_codes, src * n_nodes + dst)
        n_ok = int(ok.sum())
        out[filled : filled + n_ok, 0] = src[ok]
        out[filled : filled + n_ok, 1] = dst[ok]
        filled += n_ok
    return NegativeEdges(out)


def advanced_negative_sample(
    graph: WindowedGraph,
    existing: set[tuple[int, int]],
    alpha: float = DEFAULT_ALPHA,
    rng: np.random.Generator | None = None,
    retry_factor: int = DEFAULT_RETRY_FACTOR,
) -> NegativeEdges:
    """One negative per edge instance of `graph`, degree-weighted sources.

    Sources follow degree**alpha over the graph's total degrees, destinations
    are uniform; a candidate is rejected when the pair exists, its reverse
    exists, or it is a self-loop.  Each negative gets at most
    retry_factor * n_nodes attempts before an infeasibility error.
    """
    if rng is None:
        raise ConfigError("advanced sampling needs an explicit random generator")
    n = graph.n_nodes
    k = graph.n_edges
    if k == 0:
        return NegativeEdges(np.empty((0, 2), dtype=np.int64))
    probs = degree_source_distribution(degree_counts(graph), alpha)
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    ex_codes = _pair_codes(existing, n)
    rev_codes = _pair_codes({(d, s) for s, d in existing}, n)

    out = np.empty((k, 2), dtype=np.int64)
    filled = 0
    for _ in range(retry_factor * n):
        need = k - filled
        if need == 0:
            break
        src = np.searchsorted(cum, rng.random(need), side="right")
        dst = rng.integers(0, n, size=need)
        codes = src * n + dst
        ok = (src != dst) & ~_member(ex_codes, codes) & ~_member(rev_codes, codes)
        n_ok = int(ok.sum())
        out[filled : filled + n_ok, 0] = src[ok]
        out[filled : filled + n_ok, 1] = dst[ok]
        filled += n_ok
    if filled < k:
        raise SamplingError(
            f"could not place {k - filled} of {k} negatives within "
            f"{retry_factor * n} attempts each; the non-edge space is too tight"
        )
    return NegativeEdges(out)


def draw_negatives(
    strategy: SamplingStrategy,
    graph: WindowedGraph,
    existing: set[tuple[int, int]],
    rng: np.random.Generator,
    retry_factor: int = DEFAULT_RETRY_FACTOR,
) -> np.ndarray:
    """Dispatch on the strategy; returns a (k, 2) array (k=0 for 'none')."""
    if strategy.kind is SamplingKind.NONE:
        return np.empty((0, 2), dtype=np.int64)
    if strategy.kind is SamplingKind.SIMPLE:
        return simple_negative_sample(existing, graph.n_nodes, graph.n_edges, rng).pairs
    return advanced_negative_sample(
        graph, existing, strategy.alpha if strategy.alpha is not None else DEFAULT_ALPHA,
        rng, retry_factor,
    ).pairs
