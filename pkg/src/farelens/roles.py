"""Per-ticket station role assignment and per-station role tallies.

Each journey accounts for its origin side and its destination side exactly
once: an observed entry yields an actual-entry role (A), an unobserved or
bypassed declared origin yields a declared-origin role (C); symmetrically an
observed exit yields D and an unused declared destination yields B. When a
tap happens away from the declared endpoint, both the actual role and the
broken declared role are emitted, preserving both pieces of evidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Iterable

from .ingest import TicketJourney

OverlapKey = tuple[str, date]


class Role(Enum):
    A = "A"  # actual entry
    B = "B"  # declared destination, never tapped
    C = "C"  # declared origin, never tapped
    D = "D"  # actual exit


@dataclass(slots=True)
class RoleAssignment:
    ticket_id: str
    station: str
    role: Role
    key: OverlapKey


@dataclass(slots=True)
class StationRoleCounts:
    station: str
    count_a: int = 0
    count_b: int = 0
    count_c: int = 0
    count_d: int = 0
    keys_b: set[OverlapKey] = field(default_factory=set)
    keys_c: set[OverlapKey] = field(default_factory=set)
    entry_only_touch: int = 0
    exit_only_touch: int = 0
    complete_touch: int = 0

    def merge(self, other: "StationRoleCounts") -> None:
        """Commutative-monoid merge for partitioned accumulation."""
        self.count_a += other.count_a
        self.count_b += other.count_b
        self.count_c += other.count_c
        self.count_d += other.count_d
        self.keys_b |= other.keys_b
        self.keys_c |= other.keys_c
        self.entry_only_touch += other.entry_only_touch
        self.exit_only_touch += other.exit_only_touch
        self.complete_touch += other.complete_touch


def overlap_key(journey: TicketJourney) -> OverlapKey:
    """Same-passenger same-day proxy: card id when present, else ticket id."""
    return (journey.card_id or journey.ticket_id, journey.service_day)


def assign_roles(journey: TicketJourney) -> list[RoleAssignment]:
    """Emit the origin-side and destination-side roles for one journey."""
    key = overlap_key(journey)
    tid = journey.ticket_id
    out: list[RoleAssignment] = []

    if journey.entry_tap is not None:
        station, _ = journey.entry_tap
        out.append(RoleAssignment(tid, station, Role.A, key))
        if station != journey.declared_origin:
            out.append(RoleAssignment(tid, journey.declared_origin, Role.C, key))
    else:
        out.append(RoleAssignment(tid, journey.declared_origin, Role.C, key))

    if journey.exit_tap is not None:
        station, _ = journey.exit_tap
        out.append(RoleAssignment(tid, station, Role.D, key))
        if station != journey.declared_destination:
            out.append(RoleAssignment(tid, journey.declared_destination, Role.B, key))
    else:
        out.append(RoleAssignment(tid, journey.declared_destination, Role.B, key))
    return out


def accumulate(journeys: Iterable[TicketJourney]) -> dict[str, StationRoleCounts]:
    """Tally role counts, overlap key sets and tap-touch buckets per station.

    Touch buckets count each ticket once per station it physically tapped at,
    bucketed by whether the journey had both taps, entry only, or exit only.
    """
    counts: dict[str, StationRoleCounts] = {}

    def get(station: str) -> StationRoleCounts:
        src = counts.get(station)
        if src is None:
            src = StationRoleCounts(station=station)
            counts[station] = src
        return src

    for journey in journeys:
        for asg in assign_roles(journey):
            src = get(asg.station)
            if asg.role is Role.A:
                src.count_a += 1
            elif asg.role is Role.B:
                src.count_b += 1
                src.keys_b.add(asg.key)
            elif asg.role is Role.C:
                src.count_c += 1
                src.keys_c.add(asg.key)
            else:
                src.count_d += 1

        tapped: set[str] = set()
        if journey.entry_tap is not None:
            tapped.add(journey.entry_tap[0])
        if journey.exit_tap is not None:
            tapped.add(journey.exit_tap[0])
        complete = journey.entry_tap is not None and journey.exit_tap is not None
        for station in tapped:
            src = get(station)
            if complete:
                src.complete_touch += 1
            elif journey.entry_tap is not None:
                src.entry_only_touch += 1
            else:
                src.exit_only_touch += 1
    return counts
