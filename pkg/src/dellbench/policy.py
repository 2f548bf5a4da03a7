"""Per-task linear policies and the cross-entropy search that trains them.

A policy is one affine layer from the 512-dim embedding to 18 action scores;
the action taken is the argmax (lowest index on ties). Training is greybox
gradient-free search: because observations do not depend on actions, a fixed
set of training episodes can be embedded once and every candidate scored
against the same contexts with batched matrix products.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderModel
from .errors import (
    ActionRangeError,
    CheckpointError,
    DivergenceError,
    HalfPrecisionOverflowError,
    SchemaVersionError,
    ShapeError,
    ValidationError,
)
from .encoder import encode_batch
from .suite import ACTION_COUNT, SyntheticGame, _stable_seed, episode_batch

_MAGIC = b"DLPO"
_VERSION = 1
_F16_MAX = float(np.finfo(np.float16).max)


# ---------------------------------------------------------------------------
# cross-entropy search


def cem_search(dim: int, score_fn, budget: int, seed: int,
               population: int = 64, elite_frac: float = 0.125,
               init_scale: float = 0.1, plateau_window: int = 10,
               plateau_tol: float = 1e-3, sigma_floor: float = 1e-3,
               sigma_smoothing: float = 0.5, extra_scale: float = 0.05,
               extra_decay: float = 0.97):
    """Maximize ``score_fn`` over R^dim with an elitist cross-entropy loop.

    score_fn takes a (population, dim) candidate block and returns one score
    per row; it must be deterministic in the candidates (score against a fixed
    episode set, not freshly sampled ones). Elites from the previous iteration
    are re-injected into the next population, so with a deterministic score_fn
    the elite-mean history is non-decreasing.

    The handful of elites badly underestimates the per-dimension spread when
    dim is large, which makes the plain update collapse sigma and freeze the
    search early. Two standard countermeasures keep it alive: the new sigma
    is an exponential blend of the old one and the elite spread
    (sigma_smoothing is the weight on the old), and a decaying exploration
    term (extra_scale shrinking by extra_decay per iteration) is added on
    top. Setting sigma_smoothing=0 and extra_scale=0 recovers the textbook
    update.

    Returns (best_params, elite_mean_history, plateau_reached, iterations).
    Stops early once the relative elite-mean improvement over plateau_window
    iterations falls below plateau_tol, or immediately when an iteration shows
    zero spread between its best and worst candidate (nothing to select on).
    """
    if dim < 1:
        raise ValidationError("search dimension must be >= 1")
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    if not 0.0 < elite_frac <= 1.0:
        raise ValidationError("elite_frac must lie in (0, 1]")
    if not 0.0 <= sigma_smoothing < 1.0:
        raise ValidationError("sigma_smoothing must lie in [0, 1)")
    if extra_scale < 0.0 or not 0.0 < extra_decay <= 1.0:
        raise ValidationError("extra noise must decay from a nonnegative scale")
    n_elite = max(1, int(round(population * elite_frac)))

    rng = np.random.default_rng(seed)
    mean = np.zeros(dim, dtype=np.float64)
    sigma = np.full(dim, init_scale, dtype=np.float64)
    elites = None
    history: list[float] = []
    best_params = mean.copy()
    best_score = -np.inf
    plateau = False
    iterations = 0
    extra = extra_scale

    for _ in range(budget):
        fresh = population if elites is None else population - len(elites)
        candidates = mean + sigma * rng.standard_normal((fresh, dim))
        if elites is not None:
            candidates = np.concatenate([elites, candidates], axis=0)
        scores = np.asarray(score_fn(candidates), dtype=np.float64)
        if scores.shape != (len(candidates),):
            raise ShapeError("score_fn must return one score per candidate")
        if not np.all(np.isfinite(scores)):
            raise DivergenceError("candidate scores became non-finite")
        iterations += 1

        order = np.argsort(-scores, kind="stable")
        top = order[:n_elite]
        elites = candidates[top]
        history.append(float(scores[top].mean()))
        if scores[top[0]] > best_score:
            best_score = float(scores[top[0]])
            best_params = candidates[top[0]].copy()

        if scores.max() == scores.min():
            plateau = True
            break
        if len(history) > plateau_window:
            prev = history[-1 - plateau_window]
            gain = history[-1] - prev
            if gain < plateau_tol * max(abs(prev), 1e-12):
                plateau = True
                break

        mean = elites.mean(axis=0)
        sigma = sigma_smoothing * sigma \
            + (1.0 - sigma_smoothing) * elites.std(axis=0)
        sigma = np.maximum(sigma, sigma_floor) + extra
        extra *= extra_decay

    return best_params.astype(np.float64), history, plateau, iterations


# ---------------------------------------------------------------------------
# linear policies


@dataclass(eq=False)
class LinearPolicy:
    weights: np.ndarray   # (ACTION_COUNT, latent) float32
    bias: np.ndarray      # (ACTION_COUNT,) float32

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float32)
        self.bias = np.asarray(self.bias, dtype=np.float32)
        if self.weights.ndim != 2 or self.weights.shape[0] != ACTION_COUNT:
            raise ShapeError(f"policy weight shape {self.weights.shape} invalid")
        if self.bias.shape != (ACTION_COUNT,):
            raise ShapeError(f"policy bias shape {self.bias.shape} invalid")

    @property
    def latent_dim(self) -> int:
        return self.weights.shape[1]

    def logits(self, embedding: np.ndarray) -> np.ndarray:
        return self.weights @ np.asarray(embedding, dtype=np.float32) + self.bias


def act(policy: LinearPolicy, embedding: np.ndarray) -> int:
    """Greedy action for one embedding; ties resolve to the lowest action id."""
    scores = policy.logits(embedding)
    action = int(np.argmax(scores))
    if not 0 <= action < ACTION_COUNT:
        raise ActionRangeError(f"action {action} outside [0, {ACTION_COUNT})")
    return action


@dataclass
class PolicyTrainResult:
    policy: LinearPolicy
    train_embeddings: np.ndarray        # every embedding the search trained on
    elite_mean_history: list[float] = field(default_factory=list)
    plateau_reached: bool = False
    iterations: int = 0
    mean_train_return: float = 0.0


def rl_procedure(game: SyntheticGame, encoder: EncoderModel, budget: int = 300,
                 seed: int = 0, train_episodes: int = 8) -> PolicyTrainResult:
    """Fit a linear policy for one game on top of a frozen encoder.

    Rewards never feed back into the observation stream, so the same
    train_episodes frames are rendered and embedded once and shared by every
    candidate in every iteration. The embedding coordinates carry wildly
    different variances (appearance directions dwarf the reward-bearing
    ones), so the search runs over per-dimension standardized embeddings and
    the standardization is folded back into the returned policy, which acts
    on raw embeddings. Returns the best policy found plus the training
    embeddings, which double as the sampling pool for the support buffer of
    a learn session.
    """
    if train_episodes < 1:
        raise ValidationError("train_episodes must be >= 1")
    children = np.random.SeedSequence(
        _stable_seed("rl-train", game.id, seed)).spawn(train_episodes)
    emb_blocks = []
    gain_blocks = []
    for child in children:
        frames, gains = episode_batch(game, child)
        emb_blocks.append(encode_batch(encoder, frames))
        gain_blocks.append(gains)
    embeddings = np.concatenate(emb_blocks, axis=0).astype(np.float32)
    gains = np.concatenate(gain_blocks, axis=0)
    latent = embeddings.shape[1]
    w_size = ACTION_COUNT * latent
    emb_mean = embeddings.mean(axis=0)
    emb_scale = embeddings.std(axis=0) + np.float32(1e-6)
    whitened = (embeddings - emb_mean) / emb_scale

    def score(candidates: np.ndarray) -> np.ndarray:
        pop = len(candidates)
        w_all = candidates[:, :w_size].reshape(pop * ACTION_COUNT, latent)
        b_all = candidates[:, w_size:]
        logits = (whitened @ w_all.T.astype(np.float32)).reshape(
            len(whitened), pop, ACTION_COUNT) + b_all[None, :, :]
        chosen = np.argmax(logits, axis=2)
        picked = np.take_along_axis(gains[:, None, :], chosen[:, :, None], axis=2)
        return picked[:, :, 0].sum(axis=0) / float(train_episodes)

    best, history, plateau, iterations = cem_search(
        dim=w_size + ACTION_COUNT, score_fn=score, budget=budget,
        seed=_stable_seed("rl-cem", game.id, seed))
    weights = best[:w_size].reshape(ACTION_COUNT, latent) / emb_scale
    bias = best[w_size:] - weights @ emb_mean
    policy = LinearPolicy(weights=weights, bias=bias)
    final = float(score(best[None, :])[0])
    return PolicyTrainResult(policy=policy, train_embeddings=embeddings,
                             elite_mean_history=history,
                             plateau_reached=plateau, iterations=iterations,
                             mean_train_return=final)


# ---------------------------------------------------------------------------
# storage: policies persist as half precision


def quantize_store(policy: LinearPolicy, path) -> Path:
    """Write the policy as float16. Quantization must be a projection: storing
    an already-quantized policy reproduces the file byte for byte."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    for name, block in (("weights", policy.weights), ("bias", policy.bias)):
        if not np.all(np.isfinite(block)):
            raise DivergenceError(f"policy {name} contain non-finite values")
        if np.abs(block).max(initial=0.0) > _F16_MAX:
            raise HalfPrecisionOverflowError(
                f"policy {name} exceed half precision range (+-{_F16_MAX:.0f})")
    header = _MAGIC + struct.pack("<III", _VERSION, ACTION_COUNT, policy.latent_dim)
    body = (np.ascontiguousarray(policy.weights, dtype="<f2").tobytes()
            + np.ascontiguousarray(policy.bias, dtype="<f2").tobytes())
    path.write_bytes(header + body)
    return path


def load_policy(path) -> LinearPolicy:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"policy file {path} does not exist")
    blob = path.read_bytes()
    if blob[:4] != _MAGIC:
        raise CheckpointError(f"{path} is not a policy file")
    version, actions, latent = struct.unpack("<III", blob[4:16])
    if version != _VERSION:
        raise SchemaVersionError(f"policy file version {version} unsupported")
    if actions != ACTION_COUNT:
        raise CheckpointError(f"policy file action count {actions} unsupported")
    expected = 16 + (actions * latent + actions) * 2
    if len(blob) != expected:
        raise CheckpointError(f"{path} truncated")
    flat = np.frombuffer(blob, dtype="<f2", offset=16).astype(np.float32)
    return LinearPolicy(weights=flat[:actions * latent].reshape(actions, latent),
                        bias=flat[actions * latent:])


class PolicyRegistry:
    """One stored policy per task class, kept as files so that size accounting
    can read real byte counts."""

    def __init__(self, root) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, class_id: int) -> Path:
        if class_id < 0:
            raise ValidationError("class_id must be >= 0")
        return self.root / f"{class_id:04d}.pol"

    def store(self, class_id: int, policy: LinearPolicy) -> Path:
        return quantize_store(policy, self.path_for(class_id))

    def load(self, class_id: int) -> LinearPolicy:
        return load_policy(self.path_for(class_id))

    def class_ids(self) -> list[int]:
        return sorted(int(p.stem) for p in self.root.glob("*.pol"))

    def total_bytes(self) -> int:
        return sum(self.path_for(c).stat().st_size for c in self.class_ids())
