"""Rank fusion of the four detectors with correlation-adaptive weights.

Raw scores become ranks (1 = most anomalous, average ranks on ties), method
agreement is measured with tie-safe Spearman correlation, and each method's
weight is proportional to one minus its average correlation to the others.
Fused ranks are normalized to a 0-1 anomaly score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .detectors import METHODS, DetectorScores

NORMALIZATION_MINMAX = "minmax"
NORMALIZATION_LINEAR = "linear"  # (N - rank) / (N - 1)

DEFAULT_REDUNDANCY_THRESHOLD = 0.7


@dataclass(slots=True)
class RankVector:
    method: str
    ranks: np.ndarray  # 1 = most anomalous; ties get average ranks


@dataclass(slots=True)
class CorrelationMatrix:
    methods: tuple[str, ...]
    rho: np.ndarray  # symmetric, unit diagonal
    degenerate_methods: tuple[str, ...] = ()


@dataclass(slots=True)
class EnsembleResult:
    methods: tuple[str, ...]
    weights: np.ndarray
    final_rank: np.ndarray
    anomaly_score: np.ndarray
    redundancy_pairs: list[tuple[str, str, float]]
    method_ranks: dict[str, np.ndarray]
    correlation: CorrelationMatrix
    normalization: str
    flags: dict = field(default_factory=dict)


def to_ranks(scores: DetectorScores) -> RankVector:
    """Descending-score ranks with the average-rank tie convention."""
    values = np.asarray(scores.scores, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"non-finite scores from {scores.method}")
    return RankVector(method=scores.method, ranks=rankdata(-values, method="average"))


def spearman(r1: RankVector, r2: RankVector) -> float:
    """Tie-safe Spearman: Pearson correlation of the two rank vectors.

    An all-tied rank vector has no ordering information; its correlation to
    anything is defined as 0.
    """
    a, b = r1.ranks, r2.ranks
    if a.shape != b.shape:
        raise ValueError("rank vectors differ in length")
    if a.shape[0] < 2:
        raise ValueError("need at least 2 stations")
    da = a - a.mean()
    db = b - b.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va <= 0.0 or vb <= 0.0:
        return 0.0
    return float((da @ db) / np.sqrt(va * vb))


def correlation_matrix(rank_vectors: list[RankVector]) -> CorrelationMatrix:
    m = len(rank_vectors)
    rho = np.eye(m)
    degenerate = [rv.method for rv in rank_vectors if np.ptp(rv.ranks) == 0.0]
    for i in range(m):
        for j in range(i + 1, m):
            rho[i, j] = rho[j, i] = spearman(rank_vectors[i], rank_vectors[j])
    return CorrelationMatrix(
        methods=tuple(rv.method for rv in rank_vectors),
        rho=rho,
        degenerate_methods=tuple(degenerate),
    )


def adaptive_weights(corr: CorrelationMatrix) -> tuple[np.ndarray, bool]:
    """Weights inversely proportional to each method's mean correlation.

    Average correlations are clamped to [0, 1] before inversion; when every
    method is perfectly correlated with every other, the inverse-correlation
    mass vanishes and the weights fall back to equal, flagged by the second
    return value.
    """
    rho = corr.rho
    m = rho.shape[0]
    off = rho.copy()
    np.fill_diagonal(off, 0.0)
    ac = np.clip(off.sum(axis=1) / (m - 1), 0.0, 1.0)
    mass = 1.0 - ac
    total = float(mass.sum())
    if total < 1e-12:
        return np.full(m, 1.0 / m), True
    return mass / total, False


def fuse(rank_vectors: list[RankVector], weights: np.ndarray, corr: CorrelationMatrix,
         redundancy_threshold: float = DEFAULT_REDUNDANCY_THRESHOLD,
         normalization: str = NORMALIZATION_MINMAX,
         equal_weight_fallback: bool = False) -> EnsembleResult:
    """Weighted-average rank fusion normalized to a 0-1 anomaly score."""
    lengths = {rv.ranks.shape[0] for rv in rank_vectors}
    if len(lengths) != 1:
        raise ValueError(f"rank vectors differ in length: {sorted(lengths)}")
    n = lengths.pop()
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != len(rank_vectors):
        raise ValueError("one weight per rank vector required")

    final_rank = np.zeros(n, dtype=np.float64)
    for w, rv in zip(weights, rank_vectors):
        final_rank += w * rv.ranks

    flags: dict = {"equal_weight_fallback": equal_weight_fallback}
    if normalization == NORMALIZATION_MINMAX:
        lo, hi = float(final_rank.min()), float(final_rank.max())
        if hi - lo < 1e-12:
            scores = np.full(n, 0.5)
            flags["all_final_ranks_tied"] = True
        else:
            scores = (hi - final_rank) / (hi - lo)
    elif normalization == NORMALIZATION_LINEAR:
        scores = (n - final_rank) / (n - 1) if n > 1 else np.full(n, 0.5)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")

    redundancy_pairs = []
    for i in range(len(rank_vectors)):
        for j in range(i + 1, len(rank_vectors)):
            rho = float(corr.rho[i, j])
            if rho >= redundancy_threshold:
                redundancy_pairs.append((corr.methods[i], corr.methods[j], rho))

    return EnsembleResult(
        methods=tuple(rv.method for rv in rank_vectors),
        weights=weights,
        final_rank=final_rank,
        anomaly_score=scores,
        redundancy_pairs=redundancy_pairs,
        method_ranks={rv.method: rv.ranks for rv in rank_vectors},
        correlation=corr,
        normalization=normalization,
        flags=flags,
    )


def combine(detector_scores: list[DetectorScores],
            redundancy_threshold: float = DEFAULT_REDUNDANCY_THRESHOLD,
            normalization: str = NORMALIZATION_MINMAX) -> EnsembleResult:
    """Full ensemble pipeline: ranks, correlations, weights, fusion."""
    expected = set(METHODS)
    got = {s.method for s in detector_scores}
    if got != expected:
        raise ValueError(f"expected methods {sorted(expected)}, got {sorted(got)}")
    ordered = sorted(detector_scores, key=lambda s: METHODS.index(s.method))
    rank_vectors = [to_ranks(s) for s in ordered]
    corr = correlation_matrix(rank_vectors)
    weights, fallback = adaptive_weights(corr)
    return fuse(rank_vectors, weights, corr,
                redundancy_threshold=redundancy_threshold,
                normalization=normalization,
                equal_weight_fallback=fallback)
