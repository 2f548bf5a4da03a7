"""Deployable lifelong-learning benchmark on a synthetic game suite.

A frozen encoder plus a few-shot class-incremental task-mapper are pretrained
on procedurally generated games, then deployed to learn, recognize and
re-execute unseen games across sequential sessions while a metrics engine
scores size, growth, latency and normalized reward.
"""

from .buffer import SupportBuffer, merge, selective_sample, size_kb
from .encoder import EncoderModel, encode, encode_batch, load_encoder, random_encoder, save_encoder, train_autoencoder
from .errors import DellError, ValidationError
from .mapper import (
    MetaBaselineModel,
    TaskMapperModel,
    extend_and_adapt,
    infer_task,
    load_mapper,
    meta_baseline,
    pretrain_taskmapper,
    save_mapper,
)
from .metrics import RunReport, compute_report, emit_report, net_mean
from .orchestrator import RunConfig, SessionRecord, run, should_switch
from .policy import LinearPolicy, PolicyRegistry, act, cem_search, load_policy, quantize_store, rl_procedure
from .specfile import BenchmarkSpec, GameMeta, generate_benchmark, parse_benchmark, write_benchmark
from .suite import (
    Suite,
    SyntheticGame,
    calibrate_max_reward,
    calibrate_min_reward,
    load_suite,
    make_suite,
    normalize_reward,
    rollout,
    save_suite,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkSpec",
    "DellError",
    "EncoderModel",
    "GameMeta",
    "LinearPolicy",
    "MetaBaselineModel",
    "PolicyRegistry",
    "RunConfig",
    "RunReport",
    "SessionRecord",
    "Suite",
    "SupportBuffer",
    "SyntheticGame",
    "TaskMapperModel",
    "ValidationError",
    "act",
    "calibrate_max_reward",
    "calibrate_min_reward",
    "cem_search",
    "compute_report",
    "emit_report",
    "encode",
    "encode_batch",
    "extend_and_adapt",
    "generate_benchmark",
    "infer_task",
    "load_encoder",
    "load_mapper",
    "load_policy",
    "load_suite",
    "make_suite",
    "merge",
    "meta_baseline",
    "net_mean",
    "normalize_reward",
    "parse_benchmark",
    "pretrain_taskmapper",
    "quantize_store",
    "random_encoder",
    "rl_procedure",
    "rollout",
    "run",
    "save_encoder",
    "save_mapper",
    "save_suite",
    "selective_sample",
    "should_switch",
    "size_kb",
    "train_autoencoder",
    "write_benchmark",
]
