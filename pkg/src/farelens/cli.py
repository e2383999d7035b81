"""Command-line entry point: synth, score, eval and validate subcommands.

Exit codes: 0 success, 2 fatal input error, 3 reject-rate breach, 4 recovery
below the configured floor. Fatal errors print one machine-parsable line to
stderr: ``error: <Code>: <detail>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import detectors, ensemble, features, ingest, roles, synthgen, taxonomy
from .errors import ConfigError, FarelensError, FatalInputError

EXIT_OK = 0
EXIT_FATAL = 2
EXIT_REJECT_RATE = 3
EXIT_RECOVERY_FLOOR = 4

DEFAULT_REJECT_RATE_THRESHOLD = 0.05
DEFAULT_FLAG_THRESHOLD = 0.7
DEFAULT_TOP_K = 30

NOT_FLAGGED = ""  # pattern column for stations below the flag threshold


@dataclass(slots=True)
class RunConfig:
    taps: str = ""
    alias: str | None = None
    unknown_policy: str = "pass_through"
    window_start: date | None = None
    window_end: date | None = None
    detector: detectors.DetectorConfig = field(default_factory=detectors.DetectorConfig)
    normalization: str = ensemble.NORMALIZATION_MINMAX
    redundancy_threshold: float = ensemble.DEFAULT_REDUNDANCY_THRESHOLD
    rules: taxonomy.PatternRuleConfig = field(default_factory=taxonomy.PatternRuleConfig)
    flag_threshold: float = DEFAULT_FLAG_THRESHOLD
    out_dir: str = "out"
    seed: int = 0
    top_k: int = DEFAULT_TOP_K
    reject_rate_threshold: float = DEFAULT_REJECT_RATE_THRESHOLD

    def validate(self) -> None:
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if self.normalization not in (ensemble.NORMALIZATION_MINMAX,
                                      ensemble.NORMALIZATION_LINEAR):
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if not (0.0 <= self.flag_threshold <= 1.0):
            raise ConfigError("flag_threshold must be in [0, 1]")


def _config_dict(cfg: RunConfig) -> dict:
    def enc(value):
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {f.name: enc(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, date):
            return value.isoformat()
        return value

    return {f.name: enc(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}


def config_hash(cfg: RunConfig) -> str:
    payload = json.dumps(_config_dict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def _apply_table(obj, table: dict, context: str) -> None:
    for key, value in table.items():
        if not hasattr(obj, key):
            raise ConfigError(f"unknown key {context}.{key}")
        setattr(obj, key, value)


def load_run_config(path: str | Path) -> RunConfig:
    """Load a TOML run configuration; missing sections keep their defaults."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise FatalInputError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad config syntax: {exc}") from exc

    cfg = RunConfig()
    inp = data.get("input", {})
    cfg.taps = inp.get("taps", cfg.taps)
    cfg.alias = inp.get("alias", cfg.alias)
    cfg.unknown_policy = inp.get("unknown_policy", cfg.unknown_policy)
    if "window_start" in inp:
        cfg.window_start = _parse_date(inp["window_start"])
    if "window_end" in inp:
        cfg.window_end = _parse_date(inp["window_end"])

    det = data.get("detectors", {})
    _apply_table(cfg.detector.iforest, det.get("iforest", {}), "detectors.iforest")
    _apply_table(cfg.detector.lof, det.get("lof", {}), "detectors.lof")
    _apply_table(cfg.detector.ocsvm, det.get("ocsvm", {}), "detectors.ocsvm")
    _apply_table(cfg.detector.mahalanobis, det.get("mahalanobis", {}),
                 "detectors.mahalanobis")

    ens = data.get("ensemble", {})
    cfg.normalization = ens.get("normalization", cfg.normalization)
    cfg.redundancy_threshold = ens.get("redundancy_threshold", cfg.redundancy_threshold)

    tax = data.get("taxonomy", {})
    cfg.flag_threshold = tax.get("flag_threshold", cfg.flag_threshold)
    _apply_table(cfg.rules, tax.get("rules", {}), "taxonomy.rules")

    run = data.get("run", {})
    cfg.out_dir = run.get("out", cfg.out_dir)
    cfg.seed = run.get("seed", cfg.seed)
    cfg.top_k = run.get("top_k", cfg.top_k)
    cfg.reject_rate_threshold = run.get("reject_rate_threshold",
                                        cfg.reject_rate_threshold)
    return cfg


def _parse_date(value) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"bad date {value!r}") from exc


@dataclass(slots=True)
class ScoreArtifacts:
    payload: dict
    report_csv: Path | None
    report_json: Path | None
    summary_txt: Path | None
    rejects_csv: Path | None


def run_score_pipeline(cfg: RunConfig) -> dict:
    """Run ingest -> roles -> features -> detectors -> ensemble -> taxonomy.

    Returns the report payload (the deterministic section of report.json).
    Raises FarelensError subclasses on fatal problems.
    """
    cfg.validate()
    records, parse_rejects = ingest.parse_taps(cfg.taps)
    if cfg.alias:
        policy = (ingest.UnknownStationPolicy.REJECT
                  if cfg.unknown_policy == "reject"
                  else ingest.UnknownStationPolicy.PASS_THROUGH)
        alias_map = ingest.StationAliasMap.from_csv(cfg.alias, policy)
    else:
        alias_map = ingest.StationAliasMap.identity()
    records, norm_rejects = ingest.normalize_station_ids(records, alias_map)

    data_lines = len(records) + len(parse_rejects) + len(norm_rejects)
    line_rejects = parse_rejects + norm_rejects
    reject_rate = len(line_rejects) / data_lines if data_lines else 0.0
    if reject_rate > cfg.reject_rate_threshold:
        raise RejectRateBreach(reject_rate, line_rejects)

    journeys, ticket_rejects = ingest.assemble_tickets(records)
    if cfg.window_start is not None and cfg.window_end is not None:
        journeys = ingest.filter_window(journeys, cfg.window_start, cfg.window_end)
    if not journeys:
        raise FatalInputError("no journeys after ingest/window filtering")

    counts = roles.accumulate(journeys)
    vectors = [features.compute_features(c) for c in counts.values()]
    matrix = features.build_matrix(vectors)
    std = features.standardize(matrix)

    cfg.detector.iforest.seed = cfg.seed
    scores = detectors.run_all(std, cfg.detector)
    result = ensemble.combine(scores,
                              redundancy_threshold=cfg.redundancy_threshold,
                              normalization=cfg.normalization)

    by_station = {v.station: v for v in vectors}
    station_order = matrix.stations
    n = len(station_order)
    top_decile = taxonomy.decile_ranks(result.method_ranks, n)
    totals = np.array([by_station[s].total for s in station_order])
    low_total = taxonomy.bottom_quartile_totals(totals)

    labels: dict[str, str] = {}
    evidence: dict[str, list[str]] = {}
    for i, station in enumerate(station_order):
        if result.anomaly_score[i] < cfg.flag_threshold:
            labels[station] = NOT_FLAGGED
            evidence[station] = []
            continue
        context = taxonomy.ClassificationContext(
            top_decile={m: bool(flags[i]) for m, flags in top_decile.items()},
            bottom_quartile_total=bool(low_total[i]),
        )
        label, ev = taxonomy.classify(by_station[station], context, cfg.rules)
        labels[station] = label.value
        evidence[station] = ev

    score_by_method = {s.method: s.scores for s in scores}
    rows = []
    for i, station in enumerate(station_order):
        vec = by_station[station]
        rows.append({
            "station": station,
            "anomaly_score": float(result.anomaly_score[i]),
            "final_rank": float(result.final_rank[i]),
            "method_ranks": {m: float(result.method_ranks[m][i])
                             for m in result.methods},
            "method_scores": {m: float(score_by_method[m][i])
                              for m in result.methods},
            "features": {name: float(matrix.values[i][j])
                         for j, name in enumerate(matrix.feature_names)},
            "pattern": labels[station],
            "evidence": evidence[station],
        })
    rows.sort(key=lambda r: (-r["anomaly_score"], r["station"]))

    diagnostics = {}
    for s in scores:
        diagnostics[s.method] = {k: v for k, v in s.diagnostics.items()
                                 if not isinstance(v, np.ndarray)}

    return {
        "config": _config_dict(cfg),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "n_stations": n,
        "n_journeys": len(journeys),
        "n_line_rejects": len(line_rejects),
        "n_ticket_rejects": len(ticket_rejects),
        "reject_rate": reject_rate,
        "weights": {m: float(w) for m, w in zip(result.methods, result.weights)},
        "correlation": {
            "methods": list(result.correlation.methods),
            "rho": [[float(v) for v in row] for row in result.correlation.rho],
            "degenerate_methods": list(result.correlation.degenerate_methods),
        },
        "redundancy_pairs": [[a, b, float(r)] for a, b, r in result.redundancy_pairs],
        "normalization": result.normalization,
        "flags": result.flags,
        "stations": rows,
        "line_rejects": [[r.line, r.reason] for r in line_rejects],
    }


class RejectRateBreach(FarelensError):
    def __init__(self, rate: float, rejects: list[ingest.RejectRecord]):
        super().__init__(f"reject rate {rate:.4f} exceeds threshold")
        self.rate = rate
        self.rejects = rejects


def write_score_artifacts(payload: dict, out_dir: str | Path, top_k: int) -> ScoreArtifacts:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    report_json = out / "report.json"
    document = {
        "meta": {"generated_at": datetime.now(timezone.utc).isoformat()},
        "payload": payload,
    }
    report_json.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")

    report_csv = out / "report.csv"
    method_names = list(payload["weights"])
    feature_names = list(features.FEATURE_NAMES)
    with open(report_csv, "w", newline="", encoding="utf-8") as fh:
        header = (["station", "anomaly_score", "final_rank"]
                  + [f"rank_{m}" for m in method_names]
                  + [f"score_{m}" for m in method_names]
                  + feature_names + ["pattern", "evidence"])
        fh.write(",".join(header) + "\n")
        for row in payload["stations"]:
            cells = [row["station"], repr(row["anomaly_score"]), repr(row["final_rank"])]
            cells += [repr(row["method_ranks"][m]) for m in method_names]
            cells += [repr(row["method_scores"][m]) for m in method_names]
            cells += [repr(row["features"][name]) for name in feature_names]
            cells.append(row["pattern"])
            cells.append("\"" + " | ".join(row["evidence"]).replace('"', "'") + "\"")
            fh.write(",".join(cells) + "\n")

    summary_txt = out / "summary.txt"
    with open(summary_txt, "w", encoding="utf-8") as fh:
        fh.write(f"{'station':<12}{'score':>8}  {'rank':>8}  pattern\n")
        for row in payload["stations"][:top_k]:
            fh.write(f"{row['station']:<12}{row['anomaly_score']:>8.3f}"
                     f"  {row['final_rank']:>8.2f}  {row['pattern']}\n")

    rejects_csv = out / "rejects.csv"
    with open(rejects_csv, "w", newline="", encoding="utf-8") as fh:
        fh.write("line,reason\n")
        for line, reason in payload["line_rejects"]:
            fh.write(f"{line},{reason}\n")

    return ScoreArtifacts(payload=payload, report_csv=report_csv,
                          report_json=report_json, summary_txt=summary_txt,
                          rejects_csv=rejects_csv)


def _fail(code: str, detail: str) -> None:
    print(f"error: {code}: {detail}", file=sys.stderr)


def cmd_score(args: argparse.Namespace) -> int:
    try:
        cfg = load_run_config(args.config) if args.config else RunConfig()
        if args.taps:
            cfg.taps = args.taps
        if args.alias:
            cfg.alias = args.alias
        if args.out:
            cfg.out_dir = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        if args.top_k is not None:
            cfg.top_k = args.top_k
        if args.window:
            start, _, end = args.window.partition(":")
            cfg.window_start = _parse_date(start)
            cfg.window_end = _parse_date(end)
        if args.normalization:
            cfg.normalization = args.normalization
        if args.flag_threshold is not None:
            cfg.flag_threshold = args.flag_threshold
        if args.reject_threshold is not None:
            cfg.reject_rate_threshold = args.reject_threshold
        if not cfg.taps:
            raise FatalInputError("no taps input configured (--taps)")
        payload = run_score_pipeline(cfg)
    except RejectRateBreach as exc:
        _fail("RejectRateBreach", f"{exc.rate:.4f}")
        return EXIT_REJECT_RATE
    except FarelensError as exc:
        _fail(type(exc).__name__, str(exc))
        return EXIT_FATAL

    write_score_artifacts(payload, cfg.out_dir, cfg.top_k)
    print(f"scored {payload['n_stations']} stations from "
          f"{payload['n_journeys']} journeys -> {cfg.out_dir}")
    return EXIT_OK


def _parse_injection(text: str) -> synthgen.Injection:
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise ConfigError(f"bad injection spec {text!r}, want INDEX:LABEL[:INTENSITY]")
    try:
        index = int(parts[0])
        label = taxonomy.PatternLabel(parts[1])
        intensity = float(parts[2]) if len(parts) == 3 else 0.8
    except ValueError as exc:
        raise ConfigError(f"bad injection spec {text!r}: {exc}") from exc
    return synthgen.Injection(station_index=index, label=label, intensity=intensity)


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        cfg = synthgen.SynthConfig(
            n_stations=args.stations,
            days=args.days,
            journeys_per_day=args.journeys_per_day,
            seed=args.seed if args.seed is not None else 0,
            missing_exit_rate=args.missing_exit_rate,
            missing_entry_rate=args.missing_entry_rate,
            injections=[_parse_injection(spec) for spec in (args.inject or [])],
        )
        taps_path, truth_path = synthgen.write_outputs(cfg, args.out)
    except FarelensError as exc:
        _fail(type(exc).__name__, str(exc))
        return EXIT_FATAL
    print(f"wrote {taps_path} and {truth_path}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        report = json.loads(Path(args.report).read_text(encoding="utf-8"))
        truth = synthgen.GroundTruth.from_json(
            Path(args.truth).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        _fail("BadEvalInput", str(exc))
        return EXIT_FATAL

    rows = report["payload"]["stations"]
    stations = [row["station"] for row in rows]
    scores = np.array([row["anomaly_score"] for row in rows])
    labels = {row["station"]: row["pattern"] for row in rows}
    try:
        rec = synthgen.truth_eval(stations, scores, labels, truth, args.k)
    except ValueError as exc:
        _fail("UniverseMismatch", str(exc))
        return EXIT_FATAL

    if rec.recall_at_k is None:
        print("recall: absent (no injected stations)")
        return EXIT_OK
    print(f"recall@{args.k}: {rec.recall_at_k:.3f}")
    for archetype, value in rec.recall_per_archetype.items():
        print(f"  recall@{args.k}[{archetype}]: {value:.3f}")
    if rec.label_accuracy is not None:
        print(f"label_accuracy: {rec.label_accuracy:.3f}"
              f" (micro-trap exempt: {len(rec.accuracy_exempt)})")
    if args.floor is not None and rec.recall_at_k < args.floor:
        _fail("RecoveryBelowFloor", f"{rec.recall_at_k:.3f} < {args.floor:.3f}")
        return EXIT_RECOVERY_FLOOR
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        records, parse_rejects = ingest.parse_taps(args.taps)
        if args.alias:
            alias_map = ingest.StationAliasMap.from_csv(args.alias)
            records, norm_rejects = ingest.normalize_station_ids(records, alias_map)
        else:
            norm_rejects = []
        journeys, ticket_rejects = ingest.assemble_tickets(records)
    except FarelensError as exc:
        _fail(type(exc).__name__, str(exc))
        return EXIT_FATAL

    lines = len(records) + len(parse_rejects) + len(norm_rejects)
    rate = (len(parse_rejects) + len(norm_rejects)) / lines if lines else 0.0
    print(f"data_lines: {lines}")
    print(f"records: {len(records)}")
    print(f"line_rejects: {len(parse_rejects) + len(norm_rejects)}")
    print(f"journeys: {len(journeys)}")
    print(f"ticket_rejects: {len(ticket_rejects)}")
    print(f"reject_rate: {rate:.4f}")
    if rate > DEFAULT_REJECT_RATE_THRESHOLD:
        _fail("RejectRateBreach", f"{rate:.4f}")
        return EXIT_REJECT_RATE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="farelens",
        description="Unsupervised short-ticketing detection over railway tap data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic tap network")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--stations", type=int, default=100)
    p_synth.add_argument("--days", type=int, default=7)
    p_synth.add_argument("--journeys-per-day", type=int, default=130_000)
    p_synth.add_argument("--missing-exit-rate", type=float, default=0.02)
    p_synth.add_argument("--missing-entry-rate", type=float, default=0.01)
    p_synth.add_argument("--inject", action="append", metavar="INDEX:LABEL[:INTENSITY]")
    p_synth.set_defaults(func=cmd_synth)

    p_score = sub.add_parser("score", help="run the detection pipeline")
    p_score.add_argument("--config", help="TOML run configuration")
    p_score.add_argument("--taps")
    p_score.add_argument("--alias")
    p_score.add_argument("--out")
    p_score.add_argument("--seed", type=int)
    p_score.add_argument("--top-k", type=int, dest="top_k")
    p_score.add_argument("--window", metavar="START:END")
    p_score.add_argument("--normalization", choices=["minmax", "linear"])
    p_score.add_argument("--flag-threshold", type=float, dest="flag_threshold")
    p_score.add_argument("--reject-threshold", type=float, dest="reject_threshold")
    p_score.set_defaults(func=cmd_score)

    p_eval = sub.add_parser("eval", help="score a report against ground truth")
    p_eval.add_argument("--report", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("-k", type=int, default=8)
    p_eval.add_argument("--floor", type=float)
    p_eval.set_defaults(func=cmd_eval)

    p_val = sub.add_parser("validate", help="ingest-only dry run")
    p_val.add_argument("--taps", required=True)
    p_val.add_argument("--alias")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
