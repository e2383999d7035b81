"""Synthetic tap-network generator with labeled fraud injections.

Normal traffic follows a gravity model (origin/destination probability
proportional to the product of log-normal station masses) with complete
journeys, plus a small missing-tap noise floor standing in for manual gate
passes. Each injection rewrites a fraction of one station's tickets into the
signature of a fraud archetype, recording ground truth for evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError
from .ingest import EXPECTED_HEADER
from .taxonomy import PatternLabel

NORMAL_LABEL = "Normal"

GHOST_ENTRY_ONLY_FRACTION = 0.63  # remainder of converted tickets is exit-only


@dataclass(slots=True)
class Injection:
    station_index: int
    label: PatternLabel
    intensity: float = 0.8


@dataclass(slots=True)
class SynthConfig:
    n_stations: int = 100
    days: int = 7
    journeys_per_day: int = 130_000
    seed: int = 0
    missing_exit_rate: float = 0.02
    missing_entry_rate: float = 0.01
    injections: list[Injection] = field(default_factory=list)
    start_date: date = date(2026, 1, 5)

    def validate(self) -> None:
        if self.n_stations < 2 or self.days < 1 or self.journeys_per_day < 1:
            raise ConfigError("n_stations >= 2, days >= 1, journeys_per_day >= 1 required")
        if not (0.0 <= self.missing_exit_rate < 1.0) or not (0.0 <= self.missing_entry_rate < 1.0):
            raise ConfigError("noise rates must be in [0, 1)")
        if self.missing_exit_rate + self.missing_entry_rate >= 1.0:
            raise ConfigError("combined noise rates must stay below 1")
        seen = set()
        for inj in self.injections:
            if not (0 <= inj.station_index < self.n_stations):
                raise ConfigError(f"injection station index {inj.station_index} out of range")
            if inj.station_index in seen:
                raise ConfigError(f"duplicate injection station {inj.station_index}")
            if not (0.0 < inj.intensity <= 1.0):
                raise ConfigError(f"injection intensity must be in (0, 1], got {inj.intensity}")
            seen.add(inj.station_index)


@dataclass(slots=True)
class GroundTruth:
    labels: dict[str, str]  # station -> archetype name or "Normal"
    injected_ticket_ids: set[str]

    def to_json(self) -> str:
        return json.dumps({
            "labels": self.labels,
            "injected_ticket_ids": sorted(self.injected_ticket_ids),
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        data = json.loads(text)
        return cls(labels=dict(data["labels"]),
                   injected_ticket_ids=set(data["injected_ticket_ids"]))


def station_ids(n: int) -> list[str]:
    return [f"S{i:03d}" for i in range(n)]


def _resample_self_pairs(rng: np.random.Generator, origin: np.ndarray,
                         dest: np.ndarray, probs: np.ndarray) -> None:
    while True:
        same = origin == dest
        count = int(same.sum())
        if count == 0:
            return
        dest[same] = rng.choice(len(probs), size=count, p=probs)


def _other_endpoint(origin: np.ndarray, dest: np.ndarray, s: int) -> np.ndarray:
    return np.where(origin == s, dest, origin)


def _random_station_excluding(rng: np.random.Generator, n: int, exclude: int,
                              size: int) -> np.ndarray:
    draw = rng.integers(0, n - 1, size=size)
    return np.where(draw >= exclude, draw + 1, draw)


def generate(config: SynthConfig) -> tuple[pd.DataFrame, GroundTruth]:
    """Produce the tap table (ingest CSV column order, string cells) and truth.

    Identical config (seed included) yields an identical frame, and therefore
    byte-identical CSV output.
    """
    config.validate()
    n = config.n_stations
    ids = np.array(station_ids(n))

    master = np.random.default_rng(config.seed)
    masses = master.lognormal(mean=0.0, sigma=1.0, size=n)
    probs = masses / masses.sum()

    day_frames: list[pd.DataFrame] = []
    injected_ids: set[str] = set()
    media_values = np.array(["Contactless", "Magnetic", "Barcode"])

    for day in range(config.days):
        rng = np.random.default_rng([config.seed, 1000 + day])
        nj = config.journeys_per_day

        origin = rng.choice(n, size=nj, p=probs)
        dest = rng.choice(n, size=nj, p=probs)
        _resample_self_pairs(rng, origin, dest, probs)

        entry_sec = rng.integers(5 * 3600, 23 * 3600, size=nj)
        duration = rng.integers(600, 5400, size=nj)
        medium = media_values[rng.choice(3, size=nj, p=np.array([0.7, 0.2, 0.1]))]

        u = rng.random(nj)
        has_exit = u >= config.missing_exit_rate
        has_entry = ~((u >= config.missing_exit_rate)
                      & (u < config.missing_exit_rate + config.missing_entry_rate))

        entry_station = origin.copy()
        exit_station = dest.copy()

        tids = np.array([f"T{day:02d}{j:06d}" for j in range(nj)])
        cards = np.array([f"C{day:02d}{j:06d}" for j in range(nj)])

        extra: list[dict] = []
        for inj in config.injections:
            s = inj.station_index
            touched = (origin == s) | (dest == s)
            conv = touched & (rng.random(nj) < inj.intensity)
            other = _other_endpoint(origin, dest, s)
            idx = np.nonzero(conv)[0]
            if idx.size == 0:
                continue
            injected_ids.update(tids[idx])

            if inj.label is PatternLabel.GHOST_STATION:
                entry_side = rng.random(nj) < GHOST_ENTRY_ONLY_FRACTION
                e_idx = np.nonzero(conv & entry_side)[0]
                x_idx = np.nonzero(conv & ~entry_side)[0]
                origin[e_idx], dest[e_idx] = s, other[e_idx]
                entry_station[e_idx] = s
                has_entry[e_idx], has_exit[e_idx] = True, False
                origin[x_idx], dest[x_idx] = other[x_idx], s
                exit_station[x_idx] = s
                has_entry[x_idx], has_exit[x_idx] = False, True
            elif inj.label is PatternLabel.BLACK_HOLE:
                origin[idx], dest[idx] = other[idx], s
                exit_station[idx] = s
                has_entry[idx], has_exit[idx] = False, True
            elif inj.label is PatternLabel.FAKE_ORIGIN:
                origin[idx], dest[idx] = s, other[idx]
                entry_station[idx] = s
                has_entry[idx], has_exit[idx] = True, False
            elif inj.label is PatternLabel.FUNCTION_LOSS:
                # Declared destination never visited: exit happens elsewhere.
                origin[idx], dest[idx] = other[idx], s
                entry_station[idx] = other[idx]
                exit_station[idx] = _random_station_excluding(rng, n, s, idx.size)
                has_entry[idx], has_exit[idx] = True, True
            elif inj.label is PatternLabel.MICRO_TRAP:
                # Split-ticket pair on one card: first leg entry-only into the
                # pivot, second leg exit-only out of it.
                origin[idx], dest[idx] = other[idx], s
                entry_station[idx] = other[idx]
                has_entry[idx], has_exit[idx] = True, False
                second_dest = _random_station_excluding(rng, n, s, idx.size)
                for pos, j in enumerate(idx):
                    leg_tid = f"{tids[j]}S"
                    extra.append({
                        "tid": leg_tid,
                        "card": cards[j],
                        "origin": s,
                        "dest": int(second_dest[pos]),
                        "exit_station": int(second_dest[pos]),
                        "exit_sec": int(entry_sec[j] + duration[j]),
                        "medium": medium[j],
                    })
                    injected_ids.add(leg_tid)
            else:
                raise ConfigError(f"cannot inject label {inj.label}")

        base = np.datetime64(config.start_date, "s") + np.timedelta64(day, "D").astype("timedelta64[s]")
        entry_ts = (base + entry_sec.astype("timedelta64[s]")).astype("datetime64[s]").astype(str)
        exit_ts = (base + (entry_sec + duration).astype("timedelta64[s]")).astype("datetime64[s]").astype(str)

        parts = []
        e_mask = has_entry
        parts.append(pd.DataFrame({
            "record_id": np.char.add(tids[e_mask].astype("U16"), "E"),
            "ticket_id": tids[e_mask],
            "card_id": cards[e_mask],
            "station_id": ids[entry_station[e_mask]],
            "gate_id": "G1",
            "event_kind": "ENTRY",
            "timestamp": entry_ts[e_mask],
            "declared_origin": ids[origin[e_mask]],
            "declared_destination": ids[dest[e_mask]],
            "medium": medium[e_mask],
        }))
        x_mask = has_exit
        parts.append(pd.DataFrame({
            "record_id": np.char.add(tids[x_mask].astype("U16"), "X"),
            "ticket_id": tids[x_mask],
            "card_id": cards[x_mask],
            "station_id": ids[exit_station[x_mask]],
            "gate_id": "G1",
            "event_kind": "EXIT",
            "timestamp": exit_ts[x_mask],
            "declared_origin": ids[origin[x_mask]],
            "declared_destination": ids[dest[x_mask]],
            "medium": medium[x_mask],
        }))
        if extra:
            exit_secs = np.array([e["exit_sec"] for e in extra], dtype="int64")
            leg_ts = (base + exit_secs.astype("timedelta64[s]")).astype("datetime64[s]").astype(str)
            parts.append(pd.DataFrame({
                "record_id": [e["tid"] + "X" for e in extra],
                "ticket_id": [e["tid"] for e in extra],
                "card_id": [e["card"] for e in extra],
                "station_id": [ids[e["exit_station"]] for e in extra],
                "gate_id": "G1",
                "event_kind": "EXIT",
                "timestamp": leg_ts,
                "declared_origin": [ids[e["origin"]] for e in extra],
                "declared_destination": [ids[e["dest"]] for e in extra],
                "medium": [e["medium"] for e in extra],
            }))
        day_frames.append(pd.concat(parts, ignore_index=True))

    frame = pd.concat(day_frames, ignore_index=True)[EXPECTED_HEADER]
    labels = {sid: NORMAL_LABEL for sid in station_ids(n)}
    for inj in config.injections:
        labels[station_ids(n)[inj.station_index]] = inj.label.value
    return frame, GroundTruth(labels=labels, injected_ticket_ids=injected_ids)


def frame_to_csv_text(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n")


def write_outputs(config: SynthConfig, out_dir: str | Path) -> tuple[Path, Path]:
    """Write taps.csv and truth.json; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame, truth = generate(config)
    taps_path = out / "taps.csv"
    truth_path = out / "truth.json"
    taps_path.write_text(frame_to_csv_text(frame), encoding="utf-8")
    truth_path.write_text(truth.to_json() + "\n", encoding="utf-8")
    return taps_path, truth_path


@dataclass(slots=True)
class RecoveryReport:
    top_k: int
    recall_at_k: float | None
    recall_per_archetype: dict[str, float]
    label_accuracy: float | None
    recovered: list[str]
    accuracy_exempt: list[str]


def truth_eval(stations: list[str], anomaly_scores: np.ndarray,
               predicted_labels: dict[str, str], truth: GroundTruth,
               top_k: int) -> RecoveryReport:
    """Recall@k of injected stations plus label accuracy over recovered ones.

    Stations injected with the micro-trap archetype are exempt from the
    accuracy figure because its classification rule is an invented
    placeholder.
    """
    if set(stations) != set(truth.labels):
        raise ValueError("station universes differ between result and ground truth")
    injected = {s for s, lab in truth.labels.items() if lab != NORMAL_LABEL}
    order = sorted(range(len(stations)),
                   key=lambda i: (-float(anomaly_scores[i]), stations[i]))
    top = [stations[i] for i in order[:top_k]]
    top_set = set(top)

    if not injected:
        return RecoveryReport(top_k=top_k, recall_at_k=None, recall_per_archetype={},
                              label_accuracy=None, recovered=[], accuracy_exempt=[])

    recovered = sorted(injected & top_set)
    recall = len(recovered) / len(injected)

    per_archetype: dict[str, float] = {}
    for archetype in sorted({truth.labels[s] for s in injected}):
        members = [s for s in injected if truth.labels[s] == archetype]
        per_archetype[archetype] = sum(s in top_set for s in members) / len(members)

    exempt = [s for s in recovered
              if truth.labels[s] == PatternLabel.MICRO_TRAP.value]
    scored = [s for s in recovered if s not in exempt]
    if scored:
        hits = sum(predicted_labels.get(s) == truth.labels[s] for s in scored)
        accuracy: float | None = hits / len(scored)
    else:
        accuracy = None
    return RecoveryReport(top_k=top_k, recall_at_k=recall,
                          recall_per_archetype=per_archetype,
                          label_accuracy=accuracy, recovered=recovered,
                          accuracy_exempt=exempt)
