"""Fraud-pattern archetype labeling for high-anomaly stations.

Rules fire in a fixed priority order (ghost, black-hole, fake-origin,
function-loss, micro-trap); the first hit is the primary label and every
satisfied rule is kept as secondary evidence. The micro-trap rule has no
established criteria and is an invented placeholder, marked in its evidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .features import StationFeatureVector


class PatternLabel(Enum):
    GHOST_STATION = "GhostStation"
    BLACK_HOLE = "BlackHole"
    FAKE_ORIGIN = "FakeOrigin"
    FUNCTION_LOSS = "FunctionLoss"
    MICRO_TRAP = "MicroTrap"
    UNCLASSIFIED = "Unclassified"


@dataclass(slots=True)
class PatternRuleConfig:
    # Ghost: most taps incomplete on both sides, concentrated usage,
    # extreme global deviation.
    ghost_incomplete_share_min: float = 0.7
    ghost_side_share_min: float = 0.2  # both entry-only and exit-only present
    ghost_entropy_max: float = 0.7
    ghost_requires_mahalanobis_top_decile: bool = True
    # Black-hole: exit-dominated with a directional imbalance and strong
    # local-density evidence.
    blackhole_exit_only_share_min: float = 0.5
    blackhole_diff_ratio_min: float = 0.2
    blackhole_requires_lof_top_decile: bool = True
    # Fake-origin: entry-dominated with strong boundary-violation evidence.
    fakeorigin_entry_only_share_min: float = 0.5
    fakeorigin_requires_ocsvm_top_decile: bool = True
    # Function-loss: extreme declared-destination / declared-origin skew.
    functionloss_ratio_bc_imbalance: float = 5.0
    # Micro-trap (invented rule): split-ticket pivot signature at low volume.
    microtrap_bc_overlap_min: float = 0.5
    microtrap_requires_bottom_quartile_total: bool = True


@dataclass(slots=True)
class ClassificationContext:
    """Shared per-run context: decile flags per method plus volume quartile."""

    top_decile: dict[str, bool]
    bottom_quartile_total: bool


def decile_ranks(method_ranks: dict[str, np.ndarray], n_stations: int,
                 ) -> dict[str, np.ndarray]:
    """Boolean top-decile flags per method: rank <= ceil(N / 10)."""
    if n_stations < 1:
        raise ValueError("need at least one station")
    cutoff = math.ceil(n_stations / 10)
    return {method: np.asarray(ranks) <= cutoff for method, ranks in method_ranks.items()}


def bottom_quartile_totals(totals: np.ndarray) -> np.ndarray:
    """Stations whose activity total is at or below the 25th percentile."""
    threshold = np.percentile(np.asarray(totals, dtype=np.float64), 25)
    return np.asarray(totals) <= threshold


def classify(vector: StationFeatureVector, context: ClassificationContext,
             config: PatternRuleConfig | None = None,
             ) -> tuple[PatternLabel, list[str]]:
    """Primary archetype label plus the evidence strings of every fired rule."""
    config = config or PatternRuleConfig()
    evidence: list[str] = []
    primary = PatternLabel.UNCLASSIFIED

    incomplete = vector.entry_only_share + vector.exit_only_share
    ghost = (
        incomplete >= config.ghost_incomplete_share_min
        and vector.entry_only_share >= config.ghost_side_share_min
        and vector.exit_only_share >= config.ghost_side_share_min
        and vector.entropy <= config.ghost_entropy_max
        and (not config.ghost_requires_mahalanobis_top_decile
             or context.top_decile.get("mahalanobis", False))
    )
    if ghost:
        evidence.append(
            f"GhostStation: incomplete_share={incomplete:.3f}"
            f" entropy={vector.entropy:.3f} mahalanobis_top_decile")

    blackhole = (
        vector.exit_only_share >= config.blackhole_exit_only_share_min
        and vector.diff_ratio >= config.blackhole_diff_ratio_min
        and (not config.blackhole_requires_lof_top_decile
             or context.top_decile.get("lof", False))
    )
    if blackhole:
        evidence.append(
            f"BlackHole: exit_only_share={vector.exit_only_share:.3f}"
            f" diff_ratio={vector.diff_ratio:.3f} lof_top_decile")

    fakeorigin = (
        vector.entry_only_share >= config.fakeorigin_entry_only_share_min
        and (not config.fakeorigin_requires_ocsvm_top_decile
             or context.top_decile.get("ocsvm", False))
    )
    if fakeorigin:
        evidence.append(
            f"FakeOrigin: entry_only_share={vector.entry_only_share:.3f}"
            f" ocsvm_top_decile")

    hi = config.functionloss_ratio_bc_imbalance
    functionloss = vector.total > 0 and (vector.ratio_bc >= hi or vector.ratio_bc <= 1.0 / hi)
    if functionloss:
        evidence.append(f"FunctionLoss: ratio_bc={vector.ratio_bc:.3f}")

    microtrap = (
        vector.bc_overlap >= config.microtrap_bc_overlap_min
        and (not config.microtrap_requires_bottom_quartile_total
             or context.bottom_quartile_total)
    )
    if microtrap:
        evidence.append(
            f"MicroTrap (invented rule): bc_overlap={vector.bc_overlap:.3f}"
            f" low_total")

    for fired, label in (
        (ghost, PatternLabel.GHOST_STATION),
        (blackhole, PatternLabel.BLACK_HOLE),
        (fakeorigin, PatternLabel.FAKE_ORIGIN),
        (functionloss, PatternLabel.FUNCTION_LOSS),
        (microtrap, PatternLabel.MICRO_TRAP),
    ):
        if fired:
            primary = label
            break
    return primary, evidence
