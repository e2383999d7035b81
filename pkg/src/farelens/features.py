"""Station feature engineering: ratios, distributions, entropy and BC overlap.

Ratio features use Laplace +1 smoothing so zero-activity denominators stay
finite; stations with no role activity at all get an all-zero feature row.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .errors import InsufficientDataError
from .roles import StationRoleCounts

FEATURE_NAMES: tuple[str, ...] = (
    "count_a", "count_b", "count_c", "count_d",
    "ratio_ad", "ratio_bc", "diff_ratio",
    "pct_a", "pct_b", "pct_c", "pct_d",
    "entropy", "bc_overlap", "bc_significance",
    "entry_only_share", "exit_only_share", "complete_share",
)

_CONSTANT_STD = 1e-12


@dataclass(slots=True)
class StationFeatureVector:
    station: str
    count_a: int
    count_b: int
    count_c: int
    count_d: int
    total: int
    ratio_ad: float
    ratio_bc: float
    diff_ratio: float
    pct_a: float
    pct_b: float
    pct_c: float
    pct_d: float
    entropy: float
    bc_overlap: float
    bc_significance: float
    entry_only_share: float
    exit_only_share: float
    complete_share: float

    def as_row(self) -> list[float]:
        return [float(getattr(self, name)) for name in FEATURE_NAMES]


@dataclass(slots=True)
class FeatureMatrix:
    stations: list[str]
    feature_names: list[str]
    values: np.ndarray  # (n_stations, n_features)
    means: np.ndarray | None = None
    stds: np.ndarray | None = None
    constant_flags: np.ndarray | None = None
    standardized: bool = False


def _entropy4(pcts: Iterable[float]) -> float:
    # Normalized by log2(4) so the uniform four-role split scores exactly 1.
    h = -sum(p * math.log2(p) for p in pcts if p > 0.0)
    return h / 2.0


def compute_features(counts: StationRoleCounts) -> StationFeatureVector:
    """Derive the per-station feature vector from role tallies."""
    a, b, c, d = counts.count_a, counts.count_b, counts.count_c, counts.count_d
    total = a + b + c + d
    touches = counts.entry_only_touch + counts.exit_only_touch + counts.complete_touch

    if total == 0:
        ratio_ad = ratio_bc = diff_ratio = 0.0
        pct_a = pct_b = pct_c = pct_d = 0.0
        entropy = 0.0
        bc_overlap = bc_significance = 0.0
    else:
        ratio_ad = (a + 1) / (d + 1)
        ratio_bc = (b + 1) / (c + 1)
        diff_ratio = abs(a - d) / (a + d) if a + d > 0 else 0.0
        pct_a, pct_b, pct_c, pct_d = (a / total, b / total, c / total, d / total)
        entropy = _entropy4((pct_a, pct_b, pct_c, pct_d))
        union = len(counts.keys_b | counts.keys_c)
        bc_overlap = len(counts.keys_b & counts.keys_c) / union if union else 0.0
        bc_significance = bc_overlap * total

    if touches > 0:
        entry_only_share = counts.entry_only_touch / touches
        exit_only_share = counts.exit_only_touch / touches
        complete_share = counts.complete_touch / touches
    else:
        entry_only_share = exit_only_share = complete_share = 0.0

    return StationFeatureVector(
        station=counts.station,
        count_a=a, count_b=b, count_c=c, count_d=d, total=total,
        ratio_ad=ratio_ad, ratio_bc=ratio_bc, diff_ratio=diff_ratio,
        pct_a=pct_a, pct_b=pct_b, pct_c=pct_c, pct_d=pct_d,
        entropy=entropy, bc_overlap=bc_overlap, bc_significance=bc_significance,
        entry_only_share=entry_only_share, exit_only_share=exit_only_share,
        complete_share=complete_share,
    )


def build_matrix(vectors: Iterable[StationFeatureVector]) -> FeatureMatrix:
    """Stack feature vectors into a matrix, stations sorted by canonical id."""
    vecs = sorted(vectors, key=lambda v: v.station)
    if not vecs:
        raise InsufficientDataError("no feature vectors")
    stations = [v.station for v in vecs]
    if len(set(stations)) != len(stations):
        dupes = sorted({s for s in stations if stations.count(s) > 1})
        raise ValueError(f"duplicate stations: {dupes}")
    values = np.array([v.as_row() for v in vecs], dtype=np.float64)
    return FeatureMatrix(stations=stations, feature_names=list(FEATURE_NAMES), values=values)


def standardize(matrix: FeatureMatrix) -> FeatureMatrix:
    """Z-score each column with population std; constant columns become zeros."""
    if len(matrix.stations) < 2:
        raise InsufficientDataError("standardize needs at least 2 stations")
    values = matrix.values
    means = values.mean(axis=0)
    stds = values.std(axis=0)  # population std
    constant = stds < _CONSTANT_STD
    safe_stds = np.where(constant, 1.0, stds)
    z = (values - means) / safe_stds
    z[:, constant] = 0.0
    return FeatureMatrix(
        stations=list(matrix.stations),
        feature_names=list(matrix.feature_names),
        values=z,
        means=means,
        stds=stds,
        constant_flags=constant,
        standardized=True,
    )


def write_matrix_csv(matrix: FeatureMatrix, target: str | Path | TextIO) -> None:
    def _write(fh: TextIO) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["station", *matrix.feature_names])
        for station, row in zip(matrix.stations, matrix.values):
            writer.writerow([station, *(repr(float(v)) for v in row)])

    if isinstance(target, (str, Path)):
        with open(target, "w", newline="", encoding="utf-8") as fh:
            _write(fh)
    else:
        _write(target)


def standardization_stats_json(matrix: FeatureMatrix) -> str:
    if not matrix.standardized:
        raise ValueError("matrix is not standardized")
    assert matrix.means is not None and matrix.stds is not None
    assert matrix.constant_flags is not None
    payload = {
        "features": matrix.feature_names,
        "means": [float(v) for v in matrix.means],
        "stds": [float(v) for v in matrix.stds],
        "constant": [bool(v) for v in matrix.constant_flags],
    }
    return json.dumps(payload, indent=2, sort_keys=True)
