"""Deployment loop: runs the benchmark's sessions in order.

Each session probes the scheduled game, routes the probe through the
task-mapper, evaluates the mapped policy, and drops into learn mode when the
mean evaluation return falls strictly below the game's calibrated minimum (or
when nothing has been learnt yet). A learn switch trains a fresh policy,
samples K support embeddings into the buffer, appends a registry entry and a
new class vector, and re-evaluates for the record. Every session appends one
structured record to the event log; metrics are computed from that log alone.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .buffer import SupportBuffer, merge, save_buffer, selective_sample
from .encoder import EncoderModel, encode, encode_batch
from .errors import ValidationError
from .mapper import (
    TaskMapperModel,
    extend_and_adapt,
    infer_task,
    save_mapper,
    save_prototype_head,
)
from .policy import PolicyRegistry, PolicyTrainResult, act, rl_procedure
from .specfile import BenchmarkSpec
from .suite import Suite, _stable_seed, episode_contexts, frames_from_contexts, mean_return, rollout

MAPPER_STYLES = ("incremental", "head-bank")


def should_switch(mean_eval_return: float, min_reward: float) -> bool:
    """Learn-switch rule: strictly below the calibrated minimum."""
    return mean_eval_return < min_reward


@dataclass
class RunConfig:
    eval_episodes: int = 5
    probe_size: int = 8
    k_shot: int = 5
    cem_budget: int = 300
    cem_train_episodes: int = 8
    seed: int = 0
    mapper_style: str = "incremental"
    normalize_timings: bool = False
    # injectable for tests; must match rl_procedure's signature
    policy_trainer: Callable[..., PolicyTrainResult] | None = None

    def validate(self) -> None:
        if self.eval_episodes < 1:
            raise ValidationError("eval_episodes must be >= 1")
        if self.probe_size < 1:
            raise ValidationError("probe_size must be >= 1")
        if self.k_shot < 1:
            raise ValidationError("k_shot must be >= 1")
        if self.mapper_style not in MAPPER_STYLES:
            raise ValidationError(
                f"mapper_style must be one of {MAPPER_STYLES}, got {self.mapper_style!r}")

    def provenance_dict(self) -> dict:
        return {"eval_episodes": self.eval_episodes,
                "probe_size": self.probe_size,
                "k_shot": self.k_shot,
                "cem_budget": self.cem_budget,
                "cem_train_episodes": self.cem_train_episodes,
                "seed": self.seed,
                "mapper_style": self.mapper_style}


@dataclass
class SessionRecord:
    index: int
    game_id: str
    mode: str                              # "learn" | "evaluate"
    probe_class: int | None
    probe_confidence: float | None
    probe_ms: float
    eval_returns: list[float]              # pre-switch evaluation episodes
    mean_eval_return: float | None
    switched: bool
    post_learn_returns: list[float] | None
    decision_ms_total: float
    decision_count: int
    post_decision_ms_total: float
    post_decision_count: int
    learn_ms: float | None
    train_iterations: int | None
    train_plateau: bool | None
    model_bytes_before: int
    model_bytes_after: int
    buffer_bytes_before: int
    buffer_bytes_after: int

    def to_dict(self) -> dict:
        return {"index": self.index,
                "game_id": self.game_id,
                "mode": self.mode,
                "probe_class": self.probe_class,
                "probe_confidence": self.probe_confidence,
                "probe_ms": self.probe_ms,
                "eval_returns": self.eval_returns,
                "mean_eval_return": self.mean_eval_return,
                "switched": self.switched,
                "post_learn_returns": self.post_learn_returns,
                "decision_ms_total": self.decision_ms_total,
                "decision_count": self.decision_count,
                "post_decision_ms_total": self.post_decision_ms_total,
                "post_decision_count": self.post_decision_count,
                "learn_ms": self.learn_ms,
                "train_iterations": self.train_iterations,
                "train_plateau": self.train_plateau,
                "model_bytes_before": self.model_bytes_before,
                "model_bytes_after": self.model_bytes_after,
                "buffer_bytes_before": self.buffer_bytes_before,
                "buffer_bytes_after": self.buffer_bytes_after}


@dataclass
class RunState:
    mapper: TaskMapperModel
    registry: PolicyRegistry
    buffer: SupportBuffer
    encoder: EncoderModel
    n: int = 0
    records: list[SessionRecord] = field(default_factory=list)


def write_event_log(records: list[SessionRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(rec.to_dict()) for rec in records]
    path.write_text("\n".join(lines) + "\n")
    return path


def _timed_policy_fn(encoder: EncoderModel, policy, sink: list[float]):
    def policy_fn(frame: np.ndarray) -> int:
        start = time.perf_counter()
        action = act(policy, encode(encoder, frame))
        sink.append((time.perf_counter() - start) * 1000.0)
        return action
    return policy_fn


def _evaluate(game, encoder: EncoderModel, policy, episodes: int, seed: int):
    """Ground-truth rollout of a policy; returns (episode returns, ms per
    decision totals). This is the measured control path: encode then act."""
    sink: list[float] = []
    traces = rollout(game, _timed_policy_fn(encoder, policy, sink),
                     episodes=episodes, seed=seed)
    returns = [float(t.episode_return) for t in traces]
    return returns, float(sum(sink)), len(sink)


def run(spec: BenchmarkSpec, suite: Suite, encoder: EncoderModel,
        encoder_path, mapper: TaskMapperModel, out_dir,
        config: RunConfig | None = None) -> "RunReport":
    """Execute all beta sessions and return the computed report.

    Artifacts land in out_dir: mapper.bin and buffer.bin snapshots, one policy
    file per learnt class under policies/, per-switch head files under heads/
    when mapper_style is head-bank, events.jsonl, and report.json. Model byte
    accounting covers the encoder checkpoint, the mapper snapshot, every
    policy file, and any head files; the buffer is accounted separately.
    """
    from .metrics import compute_report  # cycle: metrics consumes run output

    config = config or RunConfig()
    config.validate()
    spec.validate()
    if mapper.n_classes != 0:
        raise ValidationError("deployment must start from an empty class list")
    encoder_path = Path(encoder_path)
    if not encoder_path.is_file():
        raise ValidationError(f"encoder checkpoint {encoder_path} missing")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mapper_path = out_dir / "mapper.bin"
    buffer_path = out_dir / "buffer.bin"
    heads_dir = out_dir / "heads"
    trainer = config.policy_trainer or rl_procedure

    state = RunState(mapper=mapper,
                     registry=PolicyRegistry(out_dir / "policies"),
                     buffer=SupportBuffer(k=config.k_shot),
                     encoder=encoder)
    save_mapper(state.mapper, mapper_path)
    save_buffer(state.buffer, buffer_path)

    def model_bytes() -> int:
        total = encoder_path.stat().st_size + mapper_path.stat().st_size \
            + state.registry.total_bytes()
        if heads_dir.is_dir():
            total += sum(p.stat().st_size for p in sorted(heads_dir.glob("*.head")))
        return total

    for index, game_id in enumerate(spec.sequence):
        game = suite.game(game_id)
        meta = spec.games[game_id]
        m_before = model_bytes()
        b_before = buffer_path.stat().st_size

        probe_seed = _stable_seed("probe", config.seed, index)
        z, w, phi, eta = episode_contexts(game, probe_seed)
        probe_frames = frames_from_contexts(game, z[:config.probe_size],
                                            w[:config.probe_size],
                                            phi[:config.probe_size],
                                            eta[:config.probe_size])
        probe_class = None
        probe_conf = None
        probe_ms = 0.0
        eval_returns: list[float] = []
        mean_eval = None
        dms_total = 0.0
        dms_count = 0

        if state.n > 0:
            start = time.perf_counter()
            probe_emb = encode_batch(state.encoder, probe_frames)
            probe_class, probe_conf = infer_task(state.mapper, probe_emb)
            probe_ms = (time.perf_counter() - start) * 1000.0
            policy = state.registry.load(probe_class)
            eval_returns, dms_total, dms_count = _evaluate(
                game, state.encoder, policy, config.eval_episodes,
                _stable_seed("eval", config.seed, index))
            mean_eval = float(np.mean(eval_returns))

        learning = state.n == 0 or should_switch(mean_eval, meta.min_reward)
        switched = state.n > 0 and learning

        post_returns = None
        post_total = 0.0
        post_count = 0
        learn_ms = None
        train_iterations = None
        train_plateau = None
        if learning:
            start = time.perf_counter()
            result = trainer(game, state.encoder, budget=config.cem_budget,
                             seed=_stable_seed("learn", config.seed, index),
                             train_episodes=config.cem_train_episodes)
            class_id = state.n
            sampled = selective_sample(result.train_embeddings, config.k_shot,
                                       _stable_seed("sample", config.seed, index))
            state.buffer = merge(state.buffer, class_id, sampled)
            state.registry.store(class_id, result.policy)
            state.mapper = extend_and_adapt(state.mapper, state.buffer)
            save_mapper(state.mapper, mapper_path)
            save_buffer(state.buffer, buffer_path)
            if config.mapper_style == "head-bank":
                save_prototype_head(state.mapper.class_vectors,
                                    heads_dir / f"{state.mapper.n_classes:02d}.head")
            state.n += 1
            learn_ms = (time.perf_counter() - start) * 1000.0
            train_iterations = result.iterations
            train_plateau = result.plateau_reached
            post_returns, post_total, post_count = _evaluate(
                game, state.encoder, result.policy, config.eval_episodes,
                _stable_seed("post-eval", config.seed, index))

        m_after = model_bytes()
        b_after = buffer_path.stat().st_size
        if state.n != len(state.registry.class_ids()) \
                or state.n != state.buffer.n_classes \
                or state.n != state.mapper.n_classes:
            raise ValidationError(
                f"session {index}: learnt-task count out of sync "
                f"(N={state.n}, registry={len(state.registry.class_ids())}, "
                f"buffer={state.buffer.n_classes}, mapper={state.mapper.n_classes})")
        if learning and not (m_after > m_before and b_after > b_before):
            raise ValidationError(
                f"session {index}: learn mode must grow model and buffer bytes")

        record = SessionRecord(
            index=index, game_id=game_id,
            mode="learn" if learning else "evaluate",
            probe_class=probe_class, probe_confidence=probe_conf,
            probe_ms=probe_ms, eval_returns=eval_returns,
            mean_eval_return=mean_eval, switched=switched,
            post_learn_returns=post_returns,
            decision_ms_total=dms_total, decision_count=dms_count,
            post_decision_ms_total=post_total, post_decision_count=post_count,
            learn_ms=learn_ms, train_iterations=train_iterations,
            train_plateau=train_plateau,
            model_bytes_before=m_before, model_bytes_after=m_after,
            buffer_bytes_before=b_before, buffer_bytes_after=b_after)
        if config.normalize_timings:
            record.probe_ms = 0.0
            record.decision_ms_total = 0.0
            record.post_decision_ms_total = 0.0
            record.learn_ms = 0.0 if learn_ms is not None else None
        state.records.append(record)

    write_event_log(state.records, out_dir / "events.jsonl")
    (out_dir / "config.json").write_text(
        json.dumps(config.provenance_dict(), indent=2, sort_keys=True) + "\n")
    return compute_report([r.to_dict() for r in state.records], spec,
                          config.provenance_dict())
