"""Post-hoc metric computation over a run's event log.

Everything here is pure arithmetic on the immutable session records plus file
sizes; nothing re-runs games. Headline metrics: MS (deployed model size, MB),
MI (mean per-decision inference time, ms), LS (learn-switch count), MG / BG
(mean percent growth of model / buffer per learn switch, with absolute deltas
kept alongside), MAR (per-unique-game mean evaluation reward) and TNMR (mean
min/max-normalized MAR).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ParseError, ValidationError
from .specfile import BenchmarkSpec

REPORT_SCHEMA_VERSION = 1

_RECORD_KEYS = ("index", "game_id", "mode", "eval_returns", "post_learn_returns",
                "decision_ms_total", "decision_count", "model_bytes_before",
                "model_bytes_after", "buffer_bytes_before", "buffer_bytes_after")


@dataclass
class RunReport:
    ms_mb: float
    mi_ms: float | None
    ls: int
    mg_pct: float
    mg_mb_abs: list[float]
    bs_kb: float
    bg_pct: float
    bg_kb_abs: list[float]
    mar: list[float]
    tnmr: float
    flags: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {"version": self.version,
                "ms_mb": self.ms_mb,
                "mi_ms": self.mi_ms,
                "ls": self.ls,
                "mg_pct": self.mg_pct,
                "mg_mb_abs": self.mg_mb_abs,
                "bs_kb": self.bs_kb,
                "bg_pct": self.bg_pct,
                "bg_kb_abs": self.bg_kb_abs,
                "mar": self.mar,
                "tnmr": self.tnmr,
                "flags": self.flags,
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        try:
            return cls(ms_mb=data["ms_mb"], mi_ms=data["mi_ms"], ls=data["ls"],
                       mg_pct=data["mg_pct"], mg_mb_abs=list(data["mg_mb_abs"]),
                       bs_kb=data["bs_kb"], bg_pct=data["bg_pct"],
                       bg_kb_abs=list(data["bg_kb_abs"]), mar=list(data["mar"]),
                       tnmr=data["tnmr"], flags=list(data["flags"]),
                       provenance=dict(data["provenance"]),
                       version=data["version"])
        except KeyError as exc:
            raise ParseError(f"report is missing key {exc}") from exc


# ---------------------------------------------------------------------------
# individual metrics


def model_size_mb(encoder_file, mapper_file, registry_dir, extras=()) -> float:
    """Deployed model size from the artifacts on disk: encoder + task-mapper +
    every stored policy (+ any extra files, e.g. per-N head banks). The buffer
    is deliberately not included; BS accounts for it."""
    total = 0
    for required in (encoder_file, mapper_file):
        p = Path(required)
        if not p.is_file():
            raise CheckpointError(f"model file {p} does not exist")
        total += p.stat().st_size
    registry_dir = Path(registry_dir)
    if registry_dir.is_dir():
        total += sum(p.stat().st_size for p in sorted(registry_dir.glob("*.pol")))
    for extra in extras:
        p = Path(extra)
        if not p.is_file():
            raise CheckpointError(f"model file {p} does not exist")
        total += p.stat().st_size
    return total / 2 ** 20


def _growth(records: list[dict], before_key: str, after_key: str,
            unit: float) -> tuple[float, list[float]]:
    pcts = []
    deltas = []
    for rec in records:
        if rec["mode"] != "learn":
            continue
        before = rec[before_key]
        after = rec[after_key]
        if before <= 0:
            raise ValidationError(
                f"session {rec['index']}: nonpositive size before a learn switch")
        pcts.append(100.0 * (after - before) / before)
        deltas.append((after - before) / unit)
    if not pcts:
        return 0.0, []
    return float(np.mean(pcts)), deltas


def compute_mg(records: list[dict]) -> tuple[float, list[float]]:
    """Mean percent model growth per learn switch, plus absolute MB deltas.
    Defined as 0 when the log holds no learn switches."""
    return _growth(records, "model_bytes_before", "model_bytes_after", 2 ** 20)


def compute_bg(records: list[dict]) -> tuple[float, list[float]]:
    """Mean percent buffer growth per learn switch, plus absolute KB deltas."""
    return _growth(records, "buffer_bytes_before", "buffer_bytes_after", 1024)


def compute_mar(records: list[dict], spec: BenchmarkSpec) -> tuple[list[float], list[str]]:
    """Per unique game, in first-appearance order, the mean over its
    evaluation sessions of the session-mean episode return. Learn sessions are
    excluded; a game that only ever appeared in learn mode falls back to its
    post-learn re-evaluation mean and is flagged."""
    mar = []
    flags = []
    for game_id in spec.first_appearance_order():
        eval_means = [float(np.mean(rec["eval_returns"])) for rec in records
                      if rec["game_id"] == game_id and rec["mode"] == "evaluate"]
        if eval_means:
            mar.append(float(np.mean(eval_means)))
            continue
        post_means = [float(np.mean(rec["post_learn_returns"])) for rec in records
                      if rec["game_id"] == game_id and rec["mode"] == "learn"
                      and rec["post_learn_returns"]]
        if not post_means:
            raise ValidationError(f"game {game_id} has no scored sessions")
        mar.append(float(np.mean(post_means)))
        flags.append(f"mar_post_learn:{game_id}")
    return mar, flags


def compute_tnmr(mar: list[float], metas: list) -> float:
    """Mean over games of the min/max-normalized MAR, each clamped to [0,1]."""
    if len(mar) != len(metas):
        raise ValidationError(
            f"MAR length {len(mar)} does not match {len(metas)} game metas")
    normalized = []
    for value, meta in zip(mar, metas):
        span = meta.max_reward - meta.min_reward
        if span <= 0:
            raise ValidationError(
                f"game {meta.name} has degenerate reward range [{meta.min_reward}, "
                f"{meta.max_reward}]")
        normalized.append(min(max((value - meta.min_reward) / span, 0.0), 1.0))
    return float(np.mean(normalized))


def mean_inference_ms(records: list[dict]) -> float | None:
    """Mean wall-clock per action decision (encode + act) across evaluation
    sessions. None when the run had no evaluation sessions."""
    total = 0.0
    count = 0
    for rec in records:
        if rec["mode"] == "evaluate":
            total += rec["decision_ms_total"]
            count += rec["decision_count"]
    if count == 0:
        return None
    return total / count


def net_mean(mapper_accuracy: float, trained_reward: float) -> float:
    """Deployed-performance estimate: routing accuracy times trained reward."""
    if not 0.0 <= mapper_accuracy <= 1.0:
        raise ValidationError("mapper accuracy must lie in [0, 1]")
    return mapper_accuracy * trained_reward


# ---------------------------------------------------------------------------
# report assembly


def _spec_digest(spec: BenchmarkSpec) -> str:
    payload = {"version": spec.version, "alpha": spec.alpha, "beta": spec.beta,
               "seed": spec.seed, "sequence": list(spec.sequence),
               "games": {gid: [m.name, m.genre, m.input_text,
                               m.min_reward, m.max_reward]
                         for gid, m in sorted(spec.games.items())}}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def compute_report(records: list[dict], spec: BenchmarkSpec,
                   config_provenance: dict | None = None) -> RunReport:
    if not records:
        raise ValidationError("event log is empty")
    ls = sum(1 for rec in records if rec["mode"] == "learn")
    mg_pct, mg_abs = compute_mg(records)
    bg_pct, bg_abs = compute_bg(records)
    mar, flags = compute_mar(records, spec)
    metas = [spec.games[gid] for gid in spec.first_appearance_order()]
    tnmr = compute_tnmr(mar, metas)
    mi = mean_inference_ms(records)
    if mi is None:
        flags.append("mi_absent")
    provenance = {"benchmark_sha256": _spec_digest(spec),
                  "benchmark_seed": spec.seed,
                  "config": dict(config_provenance or {})}
    return RunReport(ms_mb=records[-1]["model_bytes_after"] / 2 ** 20,
                     mi_ms=mi, ls=ls, mg_pct=mg_pct, mg_mb_abs=mg_abs,
                     bs_kb=records[-1]["buffer_bytes_after"] / 1024,
                     bg_pct=bg_pct, bg_kb_abs=bg_abs, mar=mar, tnmr=tnmr,
                     flags=flags, provenance=provenance)


# ---------------------------------------------------------------------------
# io


def parse_event_log(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"event log {path} does not exist")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: invalid record: {exc}") from exc
        if not isinstance(rec, dict):
            raise ParseError(f"{path}:{lineno}: record is not a mapping")
        missing = [key for key in _RECORD_KEYS if key not in rec]
        if missing:
            raise ParseError(f"{path}:{lineno}: record missing {missing}")
        records.append(rec)
    if not records:
        raise ParseError(f"event log {path} holds no records")
    return records


def emit_report(report: RunReport, path, fmt: str = "json") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    elif fmt == "csv":
        mi = "" if report.mi_ms is None else str(report.mi_ms)
        header = "MS,MG,BS,BG,TNMR,LS,MI,MAR"
        row = ",".join([str(report.ms_mb), str(report.mg_pct), str(report.bs_kb),
                        str(report.bg_pct), str(report.tnmr), str(report.ls),
                        mi, ";".join(str(v) for v in report.mar)])
        path.write_text(header + "\n" + row + "\n")
    else:
        raise ValidationError(f"unknown report format {fmt!r}")
    return path


def load_report(path) -> RunReport:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"report {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid report JSON: {exc}") from exc
    return RunReport.from_dict(data)
