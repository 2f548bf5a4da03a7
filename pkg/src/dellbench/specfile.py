"""Benchmark description files: schema, validation, generation.

A benchmark names alpha unique games played over beta sequential sessions
(beta strictly greater than alpha, so at least one game repeats). The file is
YAML with an explicit schema version; per-game records carry the calibrated
reward anchors that the deployment loop and the metrics engine both consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import InsufficientDataError, ParseError, SchemaVersionError, ValidationError
from .suite import GENRES, Suite

SCHEMA_VERSION = 1


@dataclass
class GameMeta:
    """Static description of one game as the benchmark file carries it."""

    name: str
    genre: str
    input_text: str
    min_reward: float
    max_reward: float

    def validate(self) -> None:
        if not self.name:
            raise ValidationError("game name must be non-empty")
        if self.genre not in GENRES:
            raise ValidationError(
                f"genre {self.genre!r} not in registry {GENRES}")
        if not self.max_reward > self.min_reward:
            raise ValidationError(
                f"max_reward must exceed min_reward "
                f"({self.max_reward} <= {self.min_reward})")


@dataclass
class BenchmarkSpec:
    alpha: int
    beta: int
    seed: int
    sequence: list[str]
    games: dict[str, GameMeta]
    version: int = SCHEMA_VERSION

    def validate(self) -> None:
        if self.alpha < 1:
            raise ValidationError("alpha must be >= 1")
        if not self.beta > self.alpha:
            raise ValidationError(
                f"beta must exceed alpha ({self.beta} <= {self.alpha})")
        if len(self.sequence) != self.beta:
            raise ValidationError(
                f"sequence length {len(self.sequence)} != beta {self.beta}")
        unique = list(dict.fromkeys(self.sequence))
        if len(unique) != self.alpha:
            raise ValidationError(
                f"unique-game count mismatch: sequence has {len(unique)}, "
                f"alpha is {self.alpha}")
        missing = [gid for gid in self.sequence if gid not in self.games]
        if missing:
            raise ValidationError(f"sequence names unknown games: {missing}")
        extra = [gid for gid in self.games if gid not in set(self.sequence)]
        if extra:
            raise ValidationError(f"games map lists unused ids: {extra}")
        for gid, meta in self.games.items():
            meta.validate()

    def first_appearance_order(self) -> list[str]:
        return list(dict.fromkeys(self.sequence))


def _meta_to_doc(meta: GameMeta) -> dict:
    return {
        "name": meta.name,
        "genre": meta.genre,
        "input_text": meta.input_text,
        "min_reward": float(meta.min_reward),
        "max_reward": float(meta.max_reward),
    }


def _meta_from_doc(doc: dict, where: str) -> GameMeta:
    try:
        return GameMeta(
            name=str(doc["name"]),
            genre=str(doc["genre"]),
            input_text=str(doc.get("input_text", "")),
            min_reward=float(doc["min_reward"]),
            max_reward=float(doc["max_reward"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed game record in {where}: {exc}") from exc


def parse_benchmark(path) -> BenchmarkSpec:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ParseError(f"cannot read benchmark {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"benchmark {path} is not a mapping")
    version = doc.get("version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"benchmark schema version {version!r} unsupported "
            f"(expected {SCHEMA_VERSION})")
    for key in ("alpha", "beta", "seed", "sequence", "games"):
        if key not in doc:
            raise ParseError(f"benchmark {path} missing key {key!r}")
    games = {
        str(gid): _meta_from_doc(rec, f"{path}:{gid}")
        for gid, rec in dict(doc["games"]).items()
    }
    spec = BenchmarkSpec(
        alpha=int(doc["alpha"]),
        beta=int(doc["beta"]),
        seed=int(doc["seed"]),
        sequence=[str(s) for s in doc["sequence"]],
        games=games,
        version=int(version),
    )
    spec.validate()
    return spec


def write_benchmark(spec: BenchmarkSpec, path) -> Path:
    spec.validate()
    doc = {
        "version": spec.version,
        "alpha": spec.alpha,
        "beta": spec.beta,
        "seed": spec.seed,
        "sequence": list(spec.sequence),
        "games": {gid: _meta_to_doc(meta) for gid, meta in sorted(spec.games.items())},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


def generate_benchmark(alpha: int, beta: int, suite: Suite, seed: int,
                       metas: dict[str, GameMeta] | None = None) -> BenchmarkSpec:
    """Draw a valid benchmark from a suite.

    The first alpha slots hold each unique game once (so first appearances
    precede every repeat); the remaining beta - alpha slots are sampled over
    those games with replacement. Metas default to the suite's quick metas;
    pass calibrated ones for benchmark files meant to be run.
    """
    if alpha < 1:
        raise ValidationError("alpha must be >= 1")
    if not beta > alpha:
        raise ValidationError(f"beta must exceed alpha ({beta} <= {alpha})")
    if len(suite.games) < alpha:
        raise InsufficientDataError(
            f"suite holds {len(suite.games)} games, alpha={alpha} requested")
    source = metas if metas is not None else suite.metas
    rng = np.random.default_rng(np.random.SeedSequence([seed, alpha, beta]))
    picked = rng.choice(len(suite.games), size=alpha, replace=False)
    ids = [suite.games[int(i)].id for i in picked]
    repeats = rng.choice(ids, size=beta - alpha, replace=True)
    sequence = ids + [str(r) for r in repeats]
    games = {}
    for gid in ids:
        if gid not in source:
            raise InsufficientDataError(f"no meta available for game {gid}")
        games[gid] = source[gid]
    spec = BenchmarkSpec(alpha=alpha, beta=beta, seed=seed,
                         sequence=sequence, games=games)
    spec.validate()
    return spec


# ---------------------------------------------------------------------------
# single-game meta files


def write_meta(meta: GameMeta, path) -> Path:
    meta.validate()
    doc = {"version": SCHEMA_VERSION}
    doc.update(_meta_to_doc(meta))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


def read_meta(path) -> GameMeta:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ParseError(f"cannot read meta {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"meta {path} is not a mapping")
    if doc.get("version") != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"meta schema version {doc.get('version')!r} unsupported")
    meta = _meta_from_doc(doc, str(path))
    meta.validate()
    return meta
