"""Tap-stream ingestion: parse, validate, normalize and assemble ticket journeys.

Raw gate data is messy (missing fields, station-ID aliases, duplicate and
repeated taps), so every per-line defect becomes a reject record instead of
aborting the run. Only an unreadable stream or a malformed header is fatal.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone, tzinfo
from enum import Enum
from pathlib import Path
from typing import Iterable, TextIO

from .errors import FatalInputError, InvalidWindowError

EXPECTED_HEADER = [
    "record_id",
    "ticket_id",
    "card_id",
    "station_id",
    "gate_id",
    "event_kind",
    "timestamp",
    "declared_origin",
    "declared_destination",
    "medium",
]

_MEDIA = {"MAGNETIC": "Magnetic", "CONTACTLESS": "Contactless", "BARCODE": "Barcode"}


class EventKind(Enum):
    ENTRY = "ENTRY"
    EXIT = "EXIT"


class UnknownStationPolicy(Enum):
    REJECT = "reject"
    PASS_THROUGH = "pass_through"


@dataclass(slots=True)
class SchemaConfig:
    """How to interpret the raw CSV; timestamps are converted to UTC."""

    input_tz: tzinfo = timezone.utc


@dataclass(slots=True)
class RawTapRecord:
    record_id: str
    ticket_id: str
    card_id: str | None
    station_id: str
    gate_id: str | None
    event_kind: EventKind
    timestamp: datetime
    declared_origin: str
    declared_destination: str
    medium: str
    source_line: int = 0


@dataclass(slots=True)
class RejectRecord:
    line: int
    reason: str
    detail: str = ""


@dataclass(slots=True)
class StationAliasMap:
    """Functional map raw station string -> canonical id.

    Raw ids that already equal a canonical id pass through unchanged, which
    keeps normalization idempotent under either unknown-id policy.
    """

    mapping: dict[str, str]
    unknown_policy: UnknownStationPolicy = UnknownStationPolicy.PASS_THROUGH
    _canonical: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        self._canonical = set(self.mapping.values())

    def resolve(self, raw: str) -> str | None:
        """Canonical id for ``raw``, or None if unknown under REJECT policy."""
        mapped = self.mapping.get(raw)
        if mapped is not None:
            return mapped
        if raw in self._canonical:
            return raw
        if self.unknown_policy is UnknownStationPolicy.PASS_THROUGH:
            return raw
        return None

    @classmethod
    def identity(cls) -> "StationAliasMap":
        return cls(mapping={}, unknown_policy=UnknownStationPolicy.PASS_THROUGH)

    @classmethod
    def from_csv(cls, path: str | Path,
                 unknown_policy: UnknownStationPolicy = UnknownStationPolicy.PASS_THROUGH,
                 ) -> "StationAliasMap":
        mapping: dict[str, str] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["raw_id", "canonical_id"]:
                raise FatalInputError(f"malformed alias header in {path}")
            for row in reader:
                if len(row) != 2:
                    raise FatalInputError(f"malformed alias row: {row!r}")
                raw, canon = row[0].strip(), row[1].strip()
                if raw in mapping and mapping[raw] != canon:
                    raise FatalInputError(f"alias {raw!r} maps to multiple canonical ids")
                mapping[raw] = canon
        return cls(mapping=mapping, unknown_policy=unknown_policy)


@dataclass(slots=True)
class TicketJourney:
    ticket_id: str
    card_id: str | None
    declared_origin: str
    declared_destination: str
    entry_tap: tuple[str, datetime] | None
    exit_tap: tuple[str, datetime] | None
    tap_multiplicity_flag: bool
    service_day: date


def _parse_timestamp(text: str, tz: tzinfo) -> datetime | None:
    try:
        ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        return None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=tz)
    return ts.astimezone(timezone.utc)


def parse_taps(source: str | Path | TextIO, schema: SchemaConfig | None = None,
               ) -> tuple[list[RawTapRecord], list[RejectRecord]]:
    """Parse the raw tap CSV into records plus per-line rejects.

    Every data line becomes exactly one record or one reject, so
    len(records) + len(rejects) == number of data lines. Line numbers are
    1-based file lines (the header is line 1).
    """
    schema = schema or SchemaConfig()
    if isinstance(source, (str, Path)):
        try:
            fh: TextIO = open(source, newline="", encoding="utf-8")
        except OSError as exc:
            raise FatalInputError(f"cannot open taps input: {exc}") from exc
        close = True
    else:
        fh, close = source, False

    records: list[RawTapRecord] = []
    rejects: list[RejectRecord] = []
    seen_ids: set[str] = set()
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader, None)
        except (csv.Error, UnicodeDecodeError) as exc:
            raise FatalInputError(f"unreadable taps stream: {exc}") from exc
        if header is None or [h.strip() for h in header] != EXPECTED_HEADER:
            raise FatalInputError(f"malformed taps header: {header!r}")

        tz = schema.input_tz
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(EXPECTED_HEADER):
                rejects.append(RejectRecord(lineno, "WrongFieldCount"))
                continue
            (record_id, ticket_id, card_id, station_id, gate_id, kind_raw,
             ts_raw, origin, dest, medium_raw) = (v.strip() for v in row)
            if not record_id:
                rejects.append(RejectRecord(lineno, "MissingRecordId"))
                continue
            if record_id in seen_ids:
                rejects.append(RejectRecord(lineno, "DuplicateRecordId", record_id))
                continue
            if not ticket_id:
                rejects.append(RejectRecord(lineno, "MissingTicketId", record_id))
                continue
            if not station_id:
                rejects.append(RejectRecord(lineno, "MissingStationId", record_id))
                continue
            if not ts_raw:
                rejects.append(RejectRecord(lineno, "MissingTimestamp", record_id))
                continue
            ts = _parse_timestamp(ts_raw, tz)
            if ts is None:
                rejects.append(RejectRecord(lineno, "BadTimestamp", ts_raw))
                continue
            kind = kind_raw.upper()
            if kind not in ("ENTRY", "EXIT"):
                rejects.append(RejectRecord(lineno, "BadEventKind", kind_raw))
                continue
            if not origin:
                rejects.append(RejectRecord(lineno, "MissingDeclaredOrigin", record_id))
                continue
            if not dest:
                rejects.append(RejectRecord(lineno, "MissingDeclaredDestination", record_id))
                continue
            seen_ids.add(record_id)
            medium = _MEDIA.get(medium_raw.upper(), "Other")
            records.append(RawTapRecord(
                record_id=record_id,
                ticket_id=ticket_id,
                card_id=card_id or None,
                station_id=station_id,
                gate_id=gate_id or None,
                event_kind=EventKind.ENTRY if kind == "ENTRY" else EventKind.EXIT,
                timestamp=ts,
                declared_origin=origin,
                declared_destination=dest,
                medium=medium,
                source_line=lineno,
            ))
    finally:
        if close:
            fh.close()
    return records, rejects


def normalize_station_ids(records: Iterable[RawTapRecord], alias_map: StationAliasMap,
                          ) -> tuple[list[RawTapRecord], list[RejectRecord]]:
    """Map all station fields to canonical ids; unknowns handled per policy."""
    out: list[RawTapRecord] = []
    rejects: list[RejectRecord] = []
    for rec in records:
        station = alias_map.resolve(rec.station_id)
        origin = alias_map.resolve(rec.declared_origin)
        dest = alias_map.resolve(rec.declared_destination)
        if station is None or origin is None or dest is None:
            bad = rec.station_id if station is None else (
                rec.declared_origin if origin is None else rec.declared_destination)
            rejects.append(RejectRecord(rec.source_line, "UnknownStation", bad))
            continue
        if station == rec.station_id and origin == rec.declared_origin and dest == rec.declared_destination:
            out.append(rec)
        else:
            out.append(replace(rec, station_id=station, declared_origin=origin,
                               declared_destination=dest))
    return out, rejects


def assemble_tickets(records: Iterable[RawTapRecord],
                     ) -> tuple[list[TicketJourney], list[RejectRecord]]:
    """Fold tap records into one journey per ticket.

    Earliest entry and latest exit are kept; extra taps only set the
    multiplicity flag. Tickets with contradictory declarations (including
    origin == destination) are rejected rather than guessed at.
    """
    by_ticket: dict[str, list[RawTapRecord]] = {}
    order: list[str] = []
    for rec in records:
        bucket = by_ticket.get(rec.ticket_id)
        if bucket is None:
            by_ticket[rec.ticket_id] = [rec]
            order.append(rec.ticket_id)
        else:
            bucket.append(rec)

    journeys: list[TicketJourney] = []
    rejects: list[RejectRecord] = []
    for ticket_id in order:
        taps = by_ticket[ticket_id]
        first_line = min(t.source_line for t in taps)
        declared = {(t.declared_origin, t.declared_destination) for t in taps}
        if len(declared) > 1:
            rejects.append(RejectRecord(first_line, "InconsistentDeclaration", ticket_id))
            continue
        origin, dest = next(iter(declared))
        if origin == dest:
            rejects.append(RejectRecord(first_line, "InconsistentDeclaration", ticket_id))
            continue

        entries = [t for t in taps if t.event_kind is EventKind.ENTRY]
        exits = [t for t in taps if t.event_kind is EventKind.EXIT]
        if not entries and not exits:
            rejects.append(RejectRecord(first_line, "NoTaps", ticket_id))
            continue
        entry = min(entries, key=lambda t: (t.timestamp, t.record_id)) if entries else None
        exit_ = max(exits, key=lambda t: (t.timestamp, t.record_id)) if exits else None
        if entry is not None and exit_ is not None and entry.timestamp > exit_.timestamp:
            rejects.append(RejectRecord(first_line, "OutOfOrderTaps", ticket_id))
            continue

        card_id = None
        for t in sorted(taps, key=lambda t: (t.timestamp, t.record_id)):
            if t.card_id:
                card_id = t.card_id
                break
        earliest = min(t.timestamp for t in taps)
        journeys.append(TicketJourney(
            ticket_id=ticket_id,
            card_id=card_id,
            declared_origin=origin,
            declared_destination=dest,
            entry_tap=(entry.station_id, entry.timestamp) if entry else None,
            exit_tap=(exit_.station_id, exit_.timestamp) if exit_ else None,
            tap_multiplicity_flag=len(entries) > 1 or len(exits) > 1,
            service_day=earliest.date(),
        ))
    return journeys, rejects


def filter_window(journeys: Iterable[TicketJourney], start: date, end: date,
                  ) -> list[TicketJourney]:
    """Keep journeys whose service day falls in the closed interval [start, end]."""
    if start > end:
        raise InvalidWindowError(f"empty window {start}..{end}")
    return [j for j in journeys if start <= j.service_day <= end]


def write_rejects_csv(rejects: Iterable[RejectRecord], target: str | Path | TextIO) -> None:
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="", encoding="utf-8") as fh:
            _write_rejects(rejects, fh)
    else:
        _write_rejects(rejects, target)


def _write_rejects(rejects: Iterable[RejectRecord], fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["line", "reason"])
    for rej in rejects:
        writer.writerow([rej.line, rej.reason])


def parse_taps_text(text: str, schema: SchemaConfig | None = None,
                    ) -> tuple[list[RawTapRecord], list[RejectRecord]]:
    """Convenience wrapper for in-memory CSV payloads."""
    return parse_taps(io.StringIO(text), schema)
