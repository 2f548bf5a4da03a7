"""Procedurally generated game suite with genre-structured observations.

Each game renders 84x84 frames in [0, 1] built from four layers: a static
genre base texture, a per-game identity pattern from the genre's appearance
family whose on-screen intensity flickers frame to frame (with a little
appearance noise inside the same family span), a small set of smooth
modulation patterns driven by a per-step latent context, and a
high-dimensional per-step distractor field that carries no task information.
Rewards follow a contextual-bandit rule: a hidden per-game weight matrix maps
the latent context to an expected gain for each of the 18 actions, and the
raw reward channel is the cumulative score, so it never decreases.

The genre registry below is closed; every suite (pretrain or eval) draws its
appearance families from it, so games generated for evaluation are new
parameter draws from the families seen during pretraining, never new genres.
"""

from __future__ import annotations

import functools
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import yaml

from .errors import (
    ActionRangeError,
    InsufficientDataError,
    ParseError,
    SchemaVersionError,
    ShapeError,
    ValidationError,
)

FRAME_SIDE = 84
INPUT_DIM = FRAME_SIDE * FRAME_SIDE
ACTION_COUNT = 18
CONTEXT_DIM = 4
EPISODE_LENGTH = 128

# Closed genre registry. Suite generation and benchmark validation both key
# off this tuple; a benchmark naming any other genre is rejected.
GENRES = ("shoot-up", "maze", "sports", "puzzle")

FAMILY_DIM = 4        # appearance directions per genre
MOD_BASIS_DIM = 24    # shared pool of context-modulation patterns
CLUTTER_DIM = 1024    # rank of the per-step distractor field

CORE_AMP = 0.06       # per-pixel rms of the genre-shared texture layer
IDENTITY_AMP = 5.7    # L2 norm of per-game appearance coefficients
MOD_AMP = 6.0         # L2 norm of each context modulation column
NOISE_SCALE = 1.0     # multiplier on the built-in distractor spectrum
FLICKER_LO = 0.25     # per-frame identity-layer intensity, lower bound
FLICKER_HI = 1.0      # per-frame identity-layer intensity, upper bound
IDENTITY_JITTER = 0.8  # per-frame appearance noise inside the family span

# Distractor variance profile: a block of prominent directions backed by
# a broad tail of faint ones, mimicking the long-tailed covariance of
# natural video clutter instead of a flat white field.
CLUTTER_HEAD_DIMS = 300
CLUTTER_HEAD_VAR = 0.7
CLUTTER_TAIL_VAR = 0.01

# The required-minimum reward is anchored this fraction of the way from the
# random-agent floor to the trained ceiling. An agent playing at the floor
# must switch to learn mode decisively; putting the bar exactly at the floor
# would let few-episode evaluation noise straddle it.
MIN_REWARD_MARGIN = 0.1

SUITE_SCHEMA_VERSION = 1
_CHUNK_MAGIC = b"DLCH"
_CHUNK_VERSION = 1


def _stable_seed(*parts: object) -> int:
    return zlib.crc32(":".join(str(p) for p in parts).encode())


# ---------------------------------------------------------------------------
# texture families


def _grating(rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(0.0, np.pi)
    freq = rng.uniform(2.0, 7.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    yy, xx = np.mgrid[0:FRAME_SIDE, 0:FRAME_SIDE] / float(FRAME_SIDE)
    tex = np.sin(2.0 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    return tex.ravel()


def _tile_lattice(rng: np.random.Generator) -> np.ndarray:
    cell = int(rng.integers(6, 15))
    n = FRAME_SIDE // cell + 2
    grid = rng.choice([-1.0, 1.0], size=(n, n))
    tex = np.kron(grid, np.ones((cell, cell)))
    dy, dx = rng.integers(0, cell, size=2)
    tex = tex[dy:dy + FRAME_SIDE, dx:dx + FRAME_SIDE]
    return tex.ravel()


def _blob_field(rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:FRAME_SIDE, 0:FRAME_SIDE].astype(np.float64)
    tex = np.zeros((FRAME_SIDE, FRAME_SIDE))
    for _ in range(6):
        cy, cx = rng.uniform(0, FRAME_SIDE, size=2)
        width = rng.uniform(8.0, 20.0)
        sign = rng.choice([-1.0, 1.0])
        tex += sign * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width**2))
    return tex.ravel()


def _block_mosaic(rng: np.random.Generator) -> np.ndarray:
    cells = 7
    block = FRAME_SIDE // cells
    grid = rng.uniform(-1.0, 1.0, size=(cells, cells))
    tex = np.kron(grid, np.ones((block, block)))
    full = np.zeros((FRAME_SIDE, FRAME_SIDE))
    full[: tex.shape[0], : tex.shape[1]] = tex
    return full.ravel()


_FAMILY_FN: Mapping[str, Callable[[np.random.Generator], np.ndarray]] = {
    "shoot-up": _grating,
    "maze": _tile_lattice,
    "sports": _blob_field,
    "puzzle": _block_mosaic,
}


def _normalized_texture(fn: Callable, rng: np.random.Generator) -> np.ndarray:
    tex = fn(rng).astype(np.float64)
    tex -= tex.mean()
    tex /= tex.std() + 1e-9
    return tex


@functools.lru_cache(maxsize=1)
def _signal_stack() -> tuple[np.ndarray, dict[str, slice]]:
    """Orthonormal rows spanning every structured appearance direction.

    Layout: [flat field, genre cores, per-genre family bases, modulation
    basis]. The stack is global (seeded from genre names only), so pretrain
    and eval suites share the exact same families.
    """
    rows = [np.ones(INPUT_DIM) / np.sqrt(INPUT_DIM)]
    slices: dict[str, slice] = {"flat": slice(0, 1)}
    at = 1
    for genre in GENRES:
        rng = np.random.default_rng(_stable_seed("core", genre))
        rows.append(_normalized_texture(_FAMILY_FN[genre], rng))
        slices[f"core:{genre}"] = slice(at, at + 1)
        at += 1
    for genre in GENRES:
        rng = np.random.default_rng(_stable_seed("family", genre))
        for _ in range(FAMILY_DIM):
            rows.append(_normalized_texture(_FAMILY_FN[genre], rng))
        slices[f"family:{genre}"] = slice(at, at + FAMILY_DIM)
        at += FAMILY_DIM
    rng = np.random.default_rng(_stable_seed("modulation-basis"))
    for _ in range(MOD_BASIS_DIM):
        rows.append(_normalized_texture(_blob_field, rng))
    slices["modulation"] = slice(at, at + MOD_BASIS_DIM)
    stack = np.stack(rows)
    q, _ = np.linalg.qr(stack.T)
    return np.ascontiguousarray(q.T.astype(np.float32)), slices


def _stack_rows(tag: str) -> np.ndarray:
    stack, slices = _signal_stack()
    return stack[slices[tag]]


def clutter_spectrum() -> np.ndarray:
    """Per-direction variance of the distractor field, descending."""
    lam = np.full(CLUTTER_DIM, CLUTTER_TAIL_VAR)
    lam[:CLUTTER_HEAD_DIMS] = CLUTTER_HEAD_VAR
    return lam


@functools.lru_cache(maxsize=3)
def _clutter_basis(clutter_seed: int) -> np.ndarray:
    """Distractor directions, orthogonal to every structured direction.

    Column j has L2 norm sqrt(clutter_spectrum()[j]), so a standard-normal
    coefficient vector renders clutter whose energy decays smoothly from
    the leading directions down to a broad low-variance tail.
    """
    stack, _ = _signal_stack()
    rng = np.random.default_rng(clutter_seed)
    g = rng.standard_normal((INPUT_DIM, CLUTTER_DIM)).astype(np.float32)
    g -= stack.T @ (stack @ g)
    g /= np.linalg.norm(g, axis=0, keepdims=True)
    g *= np.sqrt(clutter_spectrum()).astype(np.float32)
    return np.ascontiguousarray(g)


# ---------------------------------------------------------------------------
# games


@dataclass(eq=False)
class SyntheticGame:
    """One bandit game: flickering appearance plus hidden reward weights."""

    id: str
    genre: str
    base: np.ndarray              # (INPUT_DIM,) float32, includes 0.5 offset
    identity: np.ndarray          # (INPUT_DIM,) float32, per-game layer
    modulation: np.ndarray        # (INPUT_DIM, CONTEXT_DIM) float32
    reward_weights: np.ndarray    # (ACTION_COUNT, CONTEXT_DIM) float32
    reward_bias: np.ndarray       # (ACTION_COUNT,) float32
    noise_scale: float
    clutter_seed: int
    action_count: int = ACTION_COUNT
    episode_length: int = EPISODE_LENGTH


@dataclass(eq=False)
class EpisodeTrace:
    observations: np.ndarray        # (T, 84, 84) float32 in [0, 1]
    actions: np.ndarray             # (T,) int64
    raw_rewards: np.ndarray         # (T,) float32, cumulative score
    normalized_rewards: np.ndarray  # (T,) uint8 in {0, 1}

    @property
    def episode_return(self) -> float:
        return float(self.raw_rewards[-1])


@dataclass(eq=False)
class Suite:
    kind: str
    seed: int
    genres: tuple[str, ...]
    games: list[SyntheticGame]
    clutter_seed: int
    metas: dict[str, object] = field(default_factory=dict)

    def game(self, game_id: str) -> SyntheticGame:
        for g in self.games:
            if g.id == game_id:
                return g
        raise KeyError(f"unknown game id {game_id!r}")


_KIND_CODE = {"pretrain": 0, "eval": 1}
_KIND_PREFIX = {"pretrain": "pt", "eval": "ev"}


def _build_game(kind: str, seed: int, index: int, genre: str,
                clutter_seed: int, noise_scale: float) -> SyntheticGame:
    rng = np.random.default_rng(
        np.random.SeedSequence([_KIND_CODE[kind], seed, index]))
    core = _stack_rows(f"core:{genre}")[0]
    family = _stack_rows(f"family:{genre}")
    # identity: a random direction in the genre's family span at a per-game
    # brightness level. Sibling games are separated only by how their
    # appearance energy spreads over the family directions, so the more
    # same-genre games an episode holds, the closer its identities crowd,
    # and the brightness spread means absolute pattern energy says little
    # about which sibling is on screen.
    direction = rng.standard_normal(FAMILY_DIM)
    direction /= np.linalg.norm(direction)
    coeff = IDENTITY_AMP * rng.uniform(0.5, 1.5) * direction
    identity = family.T @ coeff
    base = 0.5 + CORE_AMP * np.sqrt(INPUT_DIM) * core / np.linalg.norm(core)
    mod_basis = _stack_rows("modulation")
    v = rng.standard_normal((MOD_BASIS_DIM, CONTEXT_DIM))
    v *= MOD_AMP / np.linalg.norm(v, axis=0, keepdims=True)
    modulation = mod_basis.T @ v
    weights = rng.standard_normal((ACTION_COUNT, CONTEXT_DIM))
    weights /= np.linalg.norm(weights, axis=1, keepdims=True)
    prefix = _KIND_PREFIX[kind]
    return SyntheticGame(
        id=f"{prefix}-{seed:08x}-{index:03d}",
        genre=genre,
        base=base.astype(np.float32),
        identity=identity.astype(np.float32),
        modulation=modulation.astype(np.float32),
        reward_weights=weights.astype(np.float32),
        reward_bias=np.zeros(ACTION_COUNT, dtype=np.float32),
        noise_scale=noise_scale,
        clutter_seed=clutter_seed,
    )


def make_suite(kind: str, n_games: int, genres: Sequence[str], seed: int,
               noise_scale: float = NOISE_SCALE,
               quick_meta_episodes: int = 200) -> Suite:
    """Generate a deterministic suite of games over the given genres.

    Games are assigned to genres round-robin so that every listed genre
    appears at least once. Each game also receives a quick Monte Carlo meta
    (random-action mean return as the floor, analytic-optimum mean return as
    the ceiling); the real calibration operators overwrite these for
    benchmark use.
    """
    if kind not in _KIND_CODE:
        raise ValidationError(f"suite kind must be pretrain or eval, got {kind!r}")
    genres = tuple(genres)
    if not genres:
        raise ValidationError("suite needs at least one genre")
    unknown = [g for g in genres if g not in GENRES]
    if unknown:
        raise ValidationError(f"genres not in registry: {unknown}")
    if n_games < len(genres):
        raise ValidationError(
            f"n_games={n_games} cannot cover {len(genres)} genres")
    clutter_seed = _stable_seed("clutter", kind, seed)
    games = [
        _build_game(kind, seed, i, genres[i % len(genres)],
                    clutter_seed, noise_scale)
        for i in range(n_games)
    ]
    suite = Suite(kind=kind, seed=seed, genres=genres, games=games,
                  clutter_seed=clutter_seed)
    for game in games:
        suite.metas[game.id] = quick_meta(game, episodes=quick_meta_episodes)
    return suite


# ---------------------------------------------------------------------------
# rollouts


def episode_contexts(
        game: SyntheticGame,
        seed) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-step latent contexts, distractor coefficients, identity flicker
    intensities, and in-family appearance noise for one episode."""
    rng = np.random.default_rng(seed)
    t = game.episode_length
    z = rng.uniform(-1.0, 1.0, size=(t, CONTEXT_DIM)).astype(np.float32)
    w = rng.standard_normal((t, CLUTTER_DIM), dtype=np.float32)
    phi = rng.uniform(FLICKER_LO, FLICKER_HI, size=t).astype(np.float32)
    eta = IDENTITY_JITTER * rng.standard_normal((t, FAMILY_DIM),
                                                dtype=np.float32)
    return z, w, phi, eta


def frames_from_contexts(game: SyntheticGame, z: np.ndarray, w: np.ndarray,
                         phi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    clutter = _clutter_basis(game.clutter_seed)
    family = _stack_rows(f"family:{game.genre}")
    flat = game.base + phi[:, None] * game.identity + eta @ family \
        + z @ game.modulation.T + game.noise_scale * (w @ clutter.T)
    np.clip(flat, 0.0, 1.0, out=flat)
    return flat.reshape(-1, FRAME_SIDE, FRAME_SIDE)


def step_gains(game: SyntheticGame, z: np.ndarray) -> np.ndarray:
    """Per-step gain of every action given contexts; shape (T, actions)."""
    scores = z @ game.reward_weights.T + game.reward_bias
    return np.maximum(scores, 0.0)


def normalize_reward(r_t: float, r_prev: float) -> int:
    """Score-delta normalization: 1 on any increase, else 0.

    The raw channel is a cumulative score, so a negative delta cannot occur
    in suite data; when fed one anyway the clamp keeps the function total and
    the output in {0, 1}.
    """
    return 1 if r_t - r_prev > 0 else 0


def rollout(game: SyntheticGame, policy_fn: Callable[[np.ndarray], int],
            episodes: int, seed) -> list[EpisodeTrace]:
    """Reference rollout path: render frames, query the policy per frame.

    Observations do not depend on actions (the context is drawn fresh each
    step), which is what makes the cheap algebraic evaluation inside the CEM
    trainer exact; this function stays the ground truth for it.
    """
    if episodes < 1:
        raise ValidationError("episodes must be >= 1")
    children = np.random.SeedSequence(seed).spawn(episodes)
    traces = []
    for child in children:
        z, w, phi, eta = episode_contexts(game, child)
        frames = frames_from_contexts(game, z, w, phi, eta)
        gains = step_gains(game, z)
        t_steps = game.episode_length
        actions = np.zeros(t_steps, dtype=np.int64)
        raw = np.zeros(t_steps, dtype=np.float32)
        norm = np.zeros(t_steps, dtype=np.uint8)
        score = 0.0
        for t in range(t_steps):
            action = int(policy_fn(frames[t]))
            if not 0 <= action < game.action_count:
                raise ActionRangeError(
                    f"action {action} outside [0, {game.action_count})")
            prev = score
            score += float(gains[t, action])
            actions[t] = action
            raw[t] = score
            norm[t] = normalize_reward(score, prev)
        traces.append(EpisodeTrace(frames, actions, raw, norm))
    return traces


def mean_return(traces: Sequence[EpisodeTrace]) -> float:
    return float(np.mean([t.episode_return for t in traces]))


# ---------------------------------------------------------------------------
# context-only oracles (no frames rendered)


def optimal_mean_return(game: SyntheticGame, episodes: int = 100,
                        seed=0) -> float:
    """Monte Carlo value of the analytic optimum (argmax over hidden weights)."""
    children = np.random.SeedSequence(seed).spawn(episodes)
    totals = []
    for child in children:
        z, _, _, _ = episode_contexts(game, child)
        totals.append(step_gains(game, z).max(axis=1).sum())
    return float(np.mean(totals))


def random_action_mean_return(game: SyntheticGame, episodes: int = 100,
                              seed=0) -> float:
    children = np.random.SeedSequence(seed).spawn(episodes)
    totals = []
    for child in children:
        rng = np.random.default_rng(child)
        z, _, _, _ = episode_contexts(game, child)
        gains = step_gains(game, z)
        acts = rng.integers(0, game.action_count, size=game.episode_length)
        totals.append(gains[np.arange(game.episode_length), acts].sum())
    return float(np.mean(totals))


def quick_meta(game: SyntheticGame, episodes: int = 200):
    from .specfile import GameMeta

    floor = random_action_mean_return(game, episodes,
                                      _stable_seed("quick-min", game.id))
    ceiling = optimal_mean_return(game, episodes,
                                  _stable_seed("quick-max", game.id))
    return GameMeta(
        name=f"synth-{game.genre}-{game.id[-3:]}",
        genre=game.genre,
        input_text=(f"Score by picking one of {game.action_count} actions per "
                    f"frame; visuals follow the {game.genre} family."),
        min_reward=float(floor + MIN_REWARD_MARGIN * (ceiling - floor)),
        max_reward=float(ceiling),
    )


# ---------------------------------------------------------------------------
# calibration


def episode_batch(game: SyntheticGame, seed) -> tuple[np.ndarray, np.ndarray]:
    """(rendered frames flattened to rows, per-action gains) for one episode."""
    z, w, phi, eta = episode_contexts(game, seed)
    frames = frames_from_contexts(game, z, w, phi, eta).reshape(-1, INPUT_DIM)
    return frames, step_gains(game, z)


def calibrate_min_reward(game: SyntheticGame, encoder, episodes: int = 100,
                         seed: int = 0) -> float:
    """Floor anchor: mean return of a frozen random encoder + random head."""
    if episodes < 1:
        raise ValidationError("episodes must be >= 1")
    latent = encoder.weights.shape[0]
    rng = np.random.default_rng(seed)
    head = rng.standard_normal((game.action_count, latent))
    head = (head / np.sqrt(latent)).astype(np.float32)
    children = np.random.SeedSequence(_stable_seed("calibrate-min", game.id, seed)).spawn(episodes)
    totals = []
    for child in children:
        frames, gains = episode_batch(game, child)
        emb = frames @ encoder.weights.T
        if encoder.bias is not None:
            emb = emb + encoder.bias
        acts = np.argmax(emb @ head.T, axis=1)
        totals.append(gains[np.arange(len(acts)), acts].sum())
    return float(np.mean(totals))


@dataclass
class MaxCalibrationResult:
    value: float
    plateau_reached: bool
    iterations: int


def calibrate_max_reward(game: SyntheticGame, budget: int = 200, seed: int = 0,
                         train_episodes: int = 8, eval_episodes: int = 50,
                         search_rank: int = 48) -> MaxCalibrationResult:
    """Ceiling anchor: cross-entropy method over a raw-frame linear policy.

    Unlike deployment policies this needs no pretrained encoder in front of
    it. A direct search over all pixel weights would hand the optimizer more
    dimensions than it can cover, so the candidate policies are parameterized
    over the leading principal directions of the calibration frames
    themselves and the basis is folded back into raw-pixel weights before
    evaluation. The projections keep their natural scale: directions with
    more on-screen variance, where all reward-bearing structure lives, steer
    the selection first, and the distractor tail contributes little until
    the search has locked onto the paying directions.
    """
    from .policy import cem_search

    if budget < 1:
        raise ValidationError("budget must be >= 1")
    if search_rank < 1:
        raise ValidationError("search_rank must be >= 1")
    train_seeds = np.random.SeedSequence(
        _stable_seed("calibrate-max-train", game.id, seed)).spawn(train_episodes)
    frame_blocks = []
    gain_blocks = []
    for child in train_seeds:
        z, w, phi, eta = episode_contexts(game, child)
        frame_blocks.append(
            frames_from_contexts(game, z, w, phi, eta).reshape(-1, INPUT_DIM))
        gain_blocks.append(step_gains(game, z))
    frames = np.concatenate(frame_blocks)
    gains = np.concatenate(gain_blocks)
    acts_dim = game.action_count

    mu = frames.mean(axis=0)
    rank = min(search_rank, len(frames) - 1)
    _, _, basis = np.linalg.svd(frames - mu, full_matrices=False)
    basis = basis[:rank]
    proj = (frames - mu) @ basis.T

    def score(candidates: np.ndarray) -> np.ndarray:
        pop = candidates.shape[0]
        w_all = candidates[:, : acts_dim * rank].reshape(pop * acts_dim, rank)
        b_all = candidates[:, acts_dim * rank:]
        logits = proj @ w_all.T
        logits = logits.reshape(-1, pop, acts_dim) + b_all[None, :, :]
        chosen = np.argmax(logits, axis=2)
        per_step = np.take_along_axis(gains[:, None, :], chosen[:, :, None], axis=2)
        return per_step[:, :, 0].sum(axis=0) / float(train_episodes)

    best, _, plateau, iterations = cem_search(
        dim=acts_dim * rank + acts_dim, score_fn=score, budget=budget,
        seed=_stable_seed("calibrate-max-cem", game.id, seed))
    w_best = best[: acts_dim * rank].reshape(acts_dim, rank) @ basis
    b_best = best[acts_dim * rank:] - w_best @ mu
    eval_seeds = np.random.SeedSequence(
        _stable_seed("calibrate-max-eval", game.id, seed)).spawn(eval_episodes)
    totals = []
    for child in eval_seeds:
        z, w, phi, eta = episode_contexts(game, child)
        frame = frames_from_contexts(game, z, w, phi, eta).reshape(-1, INPUT_DIM)
        acts = np.argmax(frame @ w_best.T + b_best, axis=1)
        g = step_gains(game, z)
        totals.append(g[np.arange(len(acts)), acts].sum())
    return MaxCalibrationResult(value=float(np.mean(totals)),
                                plateau_reached=plateau,
                                iterations=iterations)


# ---------------------------------------------------------------------------
# dataset packing


@dataclass(eq=False)
class DatasetGame:
    observations: np.ndarray  # (n, 84, 84) uint8
    rewards: np.ndarray       # (n,) uint8 in {0, 1}
    meta: object


@dataclass(eq=False)
class PretrainDataset:
    root: Path
    games: dict[str, DatasetGame]

    def frames_float(self, game_id: str) -> np.ndarray:
        obs = self.games[game_id].observations
        return obs.reshape(len(obs), INPUT_DIM).astype(np.float32) / 255.0

    def all_frames(self) -> np.ndarray:
        return np.concatenate([self.frames_float(gid) for gid in sorted(self.games)])


def _write_chunk(path: Path, obs: np.ndarray, rewards: np.ndarray) -> None:
    header = _CHUNK_MAGIC + struct.pack("<IIH", _CHUNK_VERSION, len(obs), FRAME_SIDE)
    path.write_bytes(header + obs.tobytes() + rewards.tobytes())


def _read_chunk(path: Path) -> tuple[np.ndarray, np.ndarray]:
    blob = path.read_bytes()
    if blob[:4] != _CHUNK_MAGIC:
        raise ParseError(f"{path} is not a dataset chunk")
    version, count, side = struct.unpack("<IIH", blob[4:14])
    if version != _CHUNK_VERSION:
        raise SchemaVersionError(f"chunk version {version} unsupported")
    obs_bytes = count * side * side
    expected = 14 + obs_bytes + count
    if len(blob) != expected:
        raise ParseError(f"{path} truncated: {len(blob)} != {expected} bytes")
    obs = np.frombuffer(blob, dtype=np.uint8, count=obs_bytes, offset=14)
    rewards = np.frombuffer(blob, dtype=np.uint8, count=count, offset=14 + obs_bytes)
    return obs.reshape(count, side, side).copy(), rewards.copy()


def pack_pretrain_dataset(suite: Suite, out_dir, episodes_per_game: int = 8,
                          chunk_size: int = 256, seed: int | None = None) -> Path:
    """Write the suite to disk as per-game chunked uint8 arrays plus metas.

    Observations come from random-action play. Packing is deterministic, so
    re-packing the same suite reproduces every byte.
    """
    from .specfile import write_meta

    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    base_seed = _stable_seed("pack", suite.kind, suite.seed) if seed is None else seed
    for game in suite.games:
        game_dir = root / game.id
        game_dir.mkdir(parents=True, exist_ok=True)
        children = np.random.SeedSequence([base_seed, _stable_seed(game.id)]).spawn(episodes_per_game)
        obs_parts = []
        rew_parts = []
        for child in children:
            rng = np.random.default_rng(child)
            z, w, phi, eta = episode_contexts(game, child)
            frames = frames_from_contexts(game, z, w, phi, eta)
            gains = step_gains(game, z)
            acts = rng.integers(0, game.action_count, size=game.episode_length)
            picked = gains[np.arange(game.episode_length), acts]
            obs_parts.append(np.round(frames * 255.0).astype(np.uint8))
            rew_parts.append((picked > 0).astype(np.uint8))
        obs = np.concatenate(obs_parts)
        rewards = np.concatenate(rew_parts)
        for k in range(0, len(obs), chunk_size):
            idx = k // chunk_size
            _write_chunk(game_dir / f"chunk_{idx:03d}",
                         obs[k:k + chunk_size], rewards[k:k + chunk_size])
        write_meta(suite.metas[game.id], game_dir / "meta.yaml")
    return root


def load_dataset(root) -> PretrainDataset:
    from .specfile import read_meta

    root = Path(root)
    if not root.is_dir():
        raise ParseError(f"dataset root {root} does not exist")
    games: dict[str, DatasetGame] = {}
    for game_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        chunks = sorted(game_dir.glob("chunk_*"))
        if not chunks:
            raise ParseError(f"{game_dir} has no chunks")
        obs_parts = []
        rew_parts = []
        for chunk in chunks:
            obs, rewards = _read_chunk(chunk)
            bad = set(np.unique(rewards)) - {0, 1}
            if bad:
                raise ValidationError(
                    f"{chunk} reward channel outside {{0,1}}: {sorted(bad)}")
            obs_parts.append(obs)
            rew_parts.append(rewards)
        meta = read_meta(game_dir / "meta.yaml")
        games[game_dir.name] = DatasetGame(
            observations=np.concatenate(obs_parts),
            rewards=np.concatenate(rew_parts),
            meta=meta,
        )
    if not games:
        raise ParseError(f"dataset root {root} holds no games")
    return PretrainDataset(root=root, games=games)


# ---------------------------------------------------------------------------
# suite description file


def save_suite(suite: Suite, path) -> Path:
    doc = {
        "version": SUITE_SCHEMA_VERSION,
        "kind": suite.kind,
        "seed": suite.seed,
        "n_games": len(suite.games),
        "genres": list(suite.genres),
        "noise_scale": float(suite.games[0].noise_scale),
        "ids": [g.id for g in suite.games],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


def load_suite(path) -> Suite:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ParseError(f"cannot read suite file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"suite file {path} is not a mapping")
    if doc.get("version") != SUITE_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"suite schema version {doc.get('version')!r} unsupported")
    suite = make_suite(doc["kind"], int(doc["n_games"]),
                       [str(g) for g in doc["genres"]], int(doc["seed"]),
                       noise_scale=float(doc.get("noise_scale", NOISE_SCALE)))
    ids = [g.id for g in suite.games]
    if ids != list(doc["ids"]):
        raise ValidationError(f"suite file {path} ids do not match generator output")
    return suite
