"""Metric arithmetic against hand-computed values.

Every expected number in this file was worked out on paper from the record
dicts below, so a regression in any formula (growth percentages, clamping,
normalization, fallbacks) shows up as a numeric mismatch rather than a
self-consistent wrong answer.
"""

import json

import numpy as np
import pytest

from dellbench.errors import CheckpointError, ParseError, ValidationError
from dellbench.metrics import (
    RunReport,
    compute_bg,
    compute_mar,
    compute_mg,
    compute_report,
    compute_tnmr,
    emit_report,
    load_report,
    mean_inference_ms,
    model_size_mb,
    net_mean,
    parse_event_log,
)
from dellbench.specfile import BenchmarkSpec, GameMeta


def _meta(name: str, lo: float, hi: float) -> GameMeta:
    return GameMeta(name=name, genre="maze", input_text="frames",
                    min_reward=lo, max_reward=hi)


def _record(index: int, game_id: str, mode: str, *, eval_returns=(),
            post=(), ms_total=0.0, count=0, model=(0, 0),
            buffer=(0, 0)) -> dict:
    return {"index": index, "game_id": game_id, "mode": mode,
            "eval_returns": list(eval_returns),
            "post_learn_returns": list(post),
            "decision_ms_total": ms_total, "decision_count": count,
            "model_bytes_before": model[0], "model_bytes_after": model[1],
            "buffer_bytes_before": buffer[0], "buffer_bytes_after": buffer[1]}


def _two_game_spec() -> BenchmarkSpec:
    games = {"g-a": _meta("g-a", 1.0, 3.0), "g-b": _meta("g-b", 0.0, 10.0)}
    return BenchmarkSpec(alpha=2, beta=4, seed=5,
                         sequence=["g-a", "g-b", "g-a", "g-b"], games=games)


def _two_game_log() -> list[dict]:
    return [
        _record(0, "g-a", "learn", post=[2.0, 2.5],
                model=(100, 150), buffer=(50, 80)),
        _record(1, "g-b", "learn", post=[4.0],
                model=(150, 180), buffer=(80, 120)),
        _record(2, "g-a", "evaluate", eval_returns=[1.5, 2.5],
                ms_total=30.0, count=10, model=(180, 180), buffer=(120, 120)),
        _record(3, "g-b", "evaluate", eval_returns=[12.0],
                ms_total=10.0, count=10, model=(180, 180), buffer=(120, 120)),
    ]


# ---------------------------------------------------------------------------
# growth


def test_model_growth_mean_percent_and_deltas() -> None:
    # learn sessions grow 100->150 (+50%) and 150->180 (+20%)
    pct, deltas = compute_mg(_two_game_log())
    assert pct == pytest.approx(35.0, rel=1e-12)
    assert deltas == pytest.approx([50 / 2 ** 20, 30 / 2 ** 20], rel=1e-12)


def test_buffer_growth_mean_percent_and_deltas() -> None:
    # 50->80 (+60%) and 80->120 (+50%), deltas reported in KB
    pct, deltas = compute_bg(_two_game_log())
    assert pct == pytest.approx(55.0, rel=1e-12)
    assert deltas == pytest.approx([30 / 1024, 40 / 1024], rel=1e-12)


def test_growth_ignores_evaluation_sessions() -> None:
    records = [_record(0, "g-a", "evaluate", eval_returns=[1.0],
                       count=1, model=(100, 999), buffer=(10, 999))]
    assert compute_mg(records) == (0.0, [])
    assert compute_bg(records) == (0.0, [])


def test_growth_rejects_nonpositive_starting_size() -> None:
    records = [_record(0, "g-a", "learn", post=[1.0], model=(0, 10),
                       buffer=(1, 2))]
    with pytest.raises(ValidationError):
        compute_mg(records)


# ---------------------------------------------------------------------------
# MAR / TNMR


def test_mar_orders_games_by_first_appearance() -> None:
    mar, flags = compute_mar(_two_game_log(), _two_game_spec())
    assert mar == pytest.approx([2.0, 12.0], rel=1e-12)
    assert flags == []


def test_mar_averages_session_means_not_episodes() -> None:
    """Two evaluation sessions with different episode counts must weigh
    equally: MAR is a mean of session means, not a pooled episode mean."""
    spec = _two_game_spec()
    records = _two_game_log() + [
        _record(4, "g-a", "evaluate", eval_returns=[4.0, 4.0, 4.0, 4.0],
                ms_total=1.0, count=4, model=(180, 180), buffer=(120, 120)),
    ]
    mar, _ = compute_mar(records, spec)
    # sessions for g-a have means 2.0 and 4.0; pooled episodes would give 3.33
    assert mar[0] == pytest.approx(3.0, rel=1e-12)


def test_mar_falls_back_to_post_learn_returns() -> None:
    spec = _two_game_spec()
    # g-a only ever appears as a learn session, so its post-learn
    # re-evaluation stands in for MAR and the substitution is flagged
    records = [
        _record(0, "g-a", "learn", post=[2.0, 3.0], model=(1, 2), buffer=(1, 2)),
        _record(1, "g-b", "evaluate", eval_returns=[5.0], count=1,
                model=(2, 2), buffer=(2, 2)),
        _record(2, "g-b", "evaluate", eval_returns=[6.0], count=1,
                model=(2, 2), buffer=(2, 2)),
    ]
    mar, flags = compute_mar(records, spec)
    assert mar[0] == pytest.approx(2.5, rel=1e-12)
    assert flags == ["mar_post_learn:g-a"]


def test_mar_requires_at_least_one_scored_session() -> None:
    spec = _two_game_spec()
    records = [
        _record(0, "g-a", "learn", post=[], model=(1, 2), buffer=(1, 2)),
        _record(1, "g-b", "evaluate", eval_returns=[5.0], count=1,
                model=(2, 2), buffer=(2, 2)),
    ]
    with pytest.raises(ValidationError):
        compute_mar(records, spec)


def test_tnmr_normalizes_and_clamps() -> None:
    metas = [_meta("g-a", 1.0, 3.0), _meta("g-b", 0.0, 10.0)]
    # (2.0 - 1.0) / 2.0 = 0.5 and (12.0 - 0) / 10 clamps to 1.0
    value = compute_tnmr([2.0, 12.0], metas)
    assert value == pytest.approx(0.75, rel=1e-12)
    # below-floor returns clamp to zero instead of going negative
    assert compute_tnmr([0.0, -5.0], metas) == pytest.approx(0.0, abs=1e-15)


def test_tnmr_rejects_degenerate_reward_range() -> None:
    meta = GameMeta(name="flat", genre="maze", input_text="",
                    min_reward=2.0, max_reward=2.0)
    with pytest.raises(ValidationError):
        compute_tnmr([1.0], [meta])


def test_tnmr_requires_matching_lengths() -> None:
    with pytest.raises(ValidationError):
        compute_tnmr([1.0, 2.0], [_meta("g-a", 0.0, 1.0)])


# ---------------------------------------------------------------------------
# inference time, net mean


def test_mean_inference_ms_pools_decisions() -> None:
    # (30 + 10) ms over (10 + 10) decisions
    assert mean_inference_ms(_two_game_log()) == pytest.approx(2.0, rel=1e-12)


def test_mean_inference_ms_none_without_evaluations() -> None:
    records = [_record(0, "g-a", "learn", post=[1.0], model=(1, 2),
                       buffer=(1, 2))]
    assert mean_inference_ms(records) is None


def test_net_mean_is_a_product() -> None:
    assert net_mean(0.5, 100.0) == pytest.approx(50.0, rel=1e-12)
    assert net_mean(0.0, 123.0) == 0.0
    assert net_mean(1.0, -2.0) == pytest.approx(-2.0, rel=1e-12)


def test_net_mean_rejects_out_of_range_accuracy() -> None:
    with pytest.raises(ValidationError):
        net_mean(1.2, 10.0)
    with pytest.raises(ValidationError):
        net_mean(-0.1, 10.0)


# ---------------------------------------------------------------------------
# model size from disk


def test_model_size_sums_required_files_and_policies(tmp_path) -> None:
    enc = tmp_path / "encoder.bin"
    mapper = tmp_path / "mapper.bin"
    enc.write_bytes(b"e" * 1000)
    mapper.write_bytes(b"m" * 500)
    registry = tmp_path / "policies"
    registry.mkdir()
    (registry / "0000.pol").write_bytes(b"p" * 300)
    (registry / "0001.pol").write_bytes(b"q" * 200)
    (registry / "notes.txt").write_bytes(b"x" * 10 ** 6)  # not a policy
    extra = tmp_path / "00.head"
    extra.write_bytes(b"h" * 100)
    size = model_size_mb(enc, mapper, registry, extras=[extra])
    assert size == pytest.approx(2100 / 2 ** 20, rel=1e-12)


def test_model_size_missing_registry_dir_is_empty(tmp_path) -> None:
    enc = tmp_path / "encoder.bin"
    mapper = tmp_path / "mapper.bin"
    enc.write_bytes(b"e" * 10)
    mapper.write_bytes(b"m" * 10)
    size = model_size_mb(enc, mapper, tmp_path / "nope")
    assert size == pytest.approx(20 / 2 ** 20, rel=1e-12)


def test_model_size_requires_encoder_and_mapper(tmp_path) -> None:
    present = tmp_path / "encoder.bin"
    present.write_bytes(b"e")
    with pytest.raises(CheckpointError):
        model_size_mb(present, tmp_path / "absent.bin", tmp_path)
    with pytest.raises(CheckpointError):
        model_size_mb(present, present, tmp_path, extras=[tmp_path / "gone"])


# ---------------------------------------------------------------------------
# report assembly


def test_compute_report_end_to_end() -> None:
    report = compute_report(_two_game_log(), _two_game_spec())
    assert report.ls == 2
    assert report.ms_mb == pytest.approx(180 / 2 ** 20, rel=1e-12)
    assert report.bs_kb == pytest.approx(120 / 1024, rel=1e-12)
    assert report.mg_pct == pytest.approx(35.0, rel=1e-12)
    assert report.bg_pct == pytest.approx(55.0, rel=1e-12)
    assert report.mar == pytest.approx([2.0, 12.0], rel=1e-12)
    assert report.tnmr == pytest.approx(0.75, rel=1e-12)
    assert report.mi_ms == pytest.approx(2.0, rel=1e-12)
    assert report.flags == []
    assert report.provenance["benchmark_seed"] == 5


def test_compute_report_rejects_empty_log() -> None:
    with pytest.raises(ValidationError):
        compute_report([], _two_game_spec())


def test_compute_report_flags_missing_inference_time() -> None:
    spec = _two_game_spec()
    records = [
        _record(0, "g-a", "learn", post=[2.0], model=(1, 2), buffer=(1, 2)),
        _record(1, "g-b", "learn", post=[3.0], model=(2, 3), buffer=(2, 3)),
    ]
    report = compute_report(records, spec)
    assert report.mi_ms is None
    assert "mi_absent" in report.flags
    assert "mar_post_learn:g-a" in report.flags


def test_spec_digest_tracks_benchmark_identity() -> None:
    spec = _two_game_spec()
    a = compute_report(_two_game_log(), spec).provenance["benchmark_sha256"]
    b = compute_report(_two_game_log(), spec).provenance["benchmark_sha256"]
    assert a == b and len(a) == 64
    other = _two_game_spec()
    other.seed = 6
    c = compute_report(_two_game_log(), other).provenance["benchmark_sha256"]
    assert c != a


# ---------------------------------------------------------------------------
# io


def test_parse_event_log_roundtrip(tmp_path) -> None:
    records = _two_game_log()
    path = tmp_path / "events.jsonl"
    lines = [json.dumps(rec) for rec in records]
    lines.insert(2, "")  # blank lines are tolerated
    path.write_text("\n".join(lines) + "\n")
    assert parse_event_log(path) == records


def test_parse_event_log_missing_key(tmp_path) -> None:
    rec = _record(0, "g", "learn")
    del rec["decision_count"]
    path = tmp_path / "events.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(ParseError, match="decision_count"):
        parse_event_log(path)


def test_parse_event_log_rejects_garbage(tmp_path) -> None:
    path = tmp_path / "events.jsonl"
    path.write_text("{not json\n")
    with pytest.raises(ParseError):
        parse_event_log(path)
    path.write_text("[1, 2, 3]\n")
    with pytest.raises(ParseError):
        parse_event_log(path)
    path.write_text("\n\n")
    with pytest.raises(ParseError):
        parse_event_log(path)
    with pytest.raises(ParseError):
        parse_event_log(tmp_path / "missing.jsonl")


def test_emit_report_json_roundtrip(tmp_path) -> None:
    report = compute_report(_two_game_log(), _two_game_spec())
    path = emit_report(report, tmp_path / "report.json")
    loaded = load_report(path)
    assert loaded == report


def test_emit_report_csv_layout(tmp_path) -> None:
    report = RunReport(ms_mb=1.5, mi_ms=None, ls=2, mg_pct=35.0,
                       mg_mb_abs=[0.1], bs_kb=3.0, bg_pct=55.0,
                       bg_kb_abs=[0.2], mar=[2.0, 12.0], tnmr=0.75)
    path = emit_report(report, tmp_path / "report.csv", fmt="csv")
    header, row = path.read_text().splitlines()
    assert header == "MS,MG,BS,BG,TNMR,LS,MI,MAR"
    assert row == "1.5,35.0,3.0,55.0,0.75,2,,2.0;12.0"


def test_emit_report_unknown_format(tmp_path) -> None:
    report = compute_report(_two_game_log(), _two_game_spec())
    with pytest.raises(ValidationError):
        emit_report(report, tmp_path / "report.xml", fmt="xml")


def test_load_report_errors(tmp_path) -> None:
    with pytest.raises(ParseError):
        load_report(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ParseError):
        load_report(bad)
    partial = tmp_path / "partial.json"
    partial.write_text(json.dumps({"ms_mb": 1.0}))
    with pytest.raises(ParseError):
        load_report(partial)
