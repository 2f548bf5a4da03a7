"""Task identification: a frozen feature trunk with a growable last layer.

The deployed model is numpy end to end. A dense 512->64 tanh trunk turns
frame embeddings into features; each learnt task owns one unit-norm class
vector; inference is temperature-scaled cosine similarity against those
vectors. New class vectors are produced by an adaptation pass: raw per-class
prototypes from the support buffer, refined by one self-attention head over
the whole prototype set (queries = keys = values = prototypes) with a residual
connection, then re-normalized. Trunk and attention weights are pretrained on
pseudo-incremental episodes and never move afterwards; deployment only ever
changes the class-vector list.

The fixed-N baseline in this module is a prototypical network over the same
trunk architecture, trained at exactly one way-count, with euclidean-distance
inference and no class-incremental extension.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .buffer import SupportBuffer
from .encoder import EncoderModel, encode_batch
from .errors import (
    CheckpointError,
    DivergenceError,
    InsufficientDataError,
    SchemaVersionError,
    ShapeError,
    ValidationError,
)
from .suite import PretrainDataset

FEATURE_DIM = 64
EMBED_DIM = 512

_MAGIC = b"DLTM"
_HEAD_MAGIC = b"DLPH"
_VERSION = 1


def _normalize_rows(block: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(block, axis=-1, keepdims=True)
    return block / np.maximum(norms, 1e-12)


@dataclass(eq=False)
class TaskMapperModel:
    trunk_weights: np.ndarray    # (FEATURE_DIM, EMBED_DIM)
    trunk_bias: np.ndarray       # (FEATURE_DIM,)
    query_weights: np.ndarray    # (FEATURE_DIM, FEATURE_DIM)
    key_weights: np.ndarray
    value_weights: np.ndarray
    temperature: float
    class_vectors: np.ndarray = field(default=None)  # (N, FEATURE_DIM), unit rows
    seed: int = 0
    trained_episodes: int = 0

    def __post_init__(self) -> None:
        if self.class_vectors is None:
            self.class_vectors = np.zeros((0, FEATURE_DIM), dtype=np.float32)
        self.class_vectors = np.asarray(self.class_vectors, dtype=np.float32)
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")

    @property
    def n_classes(self) -> int:
        return len(self.class_vectors)

    @property
    def is_trained(self) -> bool:
        return self.trained_episodes > 0


def trunk_features(model: TaskMapperModel, embeddings: np.ndarray) -> np.ndarray:
    arr = np.asarray(embeddings, dtype=np.float32)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != model.trunk_weights.shape[1]:
        raise ShapeError(f"embedding batch shape {arr.shape} invalid")
    feats = np.tanh(arr @ model.trunk_weights.T + model.trunk_bias)
    return feats[0] if squeeze else feats


def adapt_prototypes(model: TaskMapperModel, prototypes: np.ndarray) -> np.ndarray:
    """One scaled-dot-product attention pass over the prototype set, residual
    added, rows re-normalized. Works for any N >= 1."""
    protos = np.asarray(prototypes, dtype=np.float32)
    if protos.ndim != 2 or protos.shape[1] != FEATURE_DIM:
        raise ShapeError(f"prototype block shape {protos.shape} invalid")
    q = protos @ model.query_weights.T
    k = protos @ model.key_weights.T
    v = protos @ model.value_weights.T
    scores = (q @ k.T) / np.sqrt(FEATURE_DIM)
    scores -= scores.max(axis=1, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=1, keepdims=True)
    refined = protos + attn @ v
    return _normalize_rows(refined).astype(np.float32)


def extend_and_adapt(model: TaskMapperModel, buffer: SupportBuffer) -> TaskMapperModel:
    """Recompute every class vector from the buffer. Returns a new model whose
    frozen parts are the same arrays; only class_vectors differ."""
    buffer.validate()
    if buffer.n_classes < 1:
        raise ValidationError("buffer holds no classes to adapt over")
    grouped = buffer.grouped()                      # (N, K, EMBED_DIM)
    feats = trunk_features(model, grouped.reshape(-1, buffer.dim))
    raw = feats.reshape(buffer.n_classes, buffer.k, FEATURE_DIM).mean(axis=1)
    vectors = adapt_prototypes(model, raw)
    return TaskMapperModel(trunk_weights=model.trunk_weights,
                           trunk_bias=model.trunk_bias,
                           query_weights=model.query_weights,
                           key_weights=model.key_weights,
                           value_weights=model.value_weights,
                           temperature=model.temperature,
                           class_vectors=vectors,
                           seed=model.seed,
                           trained_episodes=model.trained_episodes)


def feature_logits(model: TaskMapperModel, mean_feature: np.ndarray) -> np.ndarray:
    """Temperature-scaled cosine logits of one aggregated probe feature."""
    if model.n_classes < 1:
        raise ValidationError("mapper has no learnt classes")
    unit = mean_feature / max(float(np.linalg.norm(mean_feature)), 1e-12)
    return model.temperature * (model.class_vectors @ unit.astype(np.float32))


def infer_task(model: TaskMapperModel, probe: np.ndarray) -> tuple[int, float]:
    """Map a probe (one or more embeddings) to (class id, softmax confidence).
    Ties go to the lowest class id."""
    probe = np.asarray(probe, dtype=np.float32)
    if probe.ndim == 1:
        probe = probe[None, :]
    if len(probe) < 1:
        raise ValidationError("probe must contain at least one embedding")
    mean_feat = trunk_features(model, probe).mean(axis=0)
    logits = feature_logits(model, mean_feat)
    winner = int(np.argmax(logits))
    shifted = np.exp(logits - logits.max())
    confidence = float(shifted[winner] / shifted.sum())
    return winner, confidence


def classify_queries(model: TaskMapperModel, queries: np.ndarray) -> np.ndarray:
    """Vectorized single-embedding inference, one predicted class per row."""
    feats = _normalize_rows(trunk_features(model, queries))
    return np.argmax(feats @ model.class_vectors.T, axis=1)


# ---------------------------------------------------------------------------
# pretraining


def _dataset_embeddings(dataset: PretrainDataset, encoder: EncoderModel) -> list[np.ndarray]:
    return [encode_batch(encoder, dataset.frames_float(game_id))
            for game_id in sorted(dataset.games)]


def pretrain_taskmapper(dataset: PretrainDataset, encoder: EncoderModel,
                        episodes: int = 4000, seed: int = 0, k_shot: int = 5,
                        lr: float = 1e-3, base_pool: int = 32,
                        queries_per_class: int = 8,
                        mix_fraction: float = 0.5) -> TaskMapperModel:
    """Episodic pretraining of trunk + attention + temperature.

    Each episode simulates an incremental step: a few base classes get
    prototypes from a larger pool, one or two pseudo-new classes get
    prototypes from only K support samples, the adaptation pass runs over all
    of them, and query cross-entropy is minimized over every class. The number
    of ways varies per episode so the attention module never fixates on one
    set size. Around mix_fraction of the class slots hold virtual games:
    convex mixes of two same-genre games in embedding space. Deployment
    presents games that exist nowhere in the pretrain set, so the episodes
    must do the same, otherwise the trunk and the adaptation pass memorize
    the particular pretrain games instead of the genre geometry.
    """
    import torch

    if len(dataset.games) < 5:
        raise InsufficientDataError(
            f"pretraining needs at least 5 games, dataset has {len(dataset.games)}")
    if episodes < 0:
        raise ValidationError("episodes must be >= 0")
    if not 0.0 <= mix_fraction <= 1.0:
        raise ValidationError("mix_fraction must lie in [0, 1]")
    embs = _dataset_embeddings(dataset, encoder)
    per_class = min(len(block) for block in embs)
    if per_class < base_pool + queries_per_class:
        raise InsufficientDataError(
            f"each game needs {base_pool + queries_per_class} frames, smallest has {per_class}")
    n_games = len(embs)
    genres = [dataset.games[gid].meta.genre for gid in sorted(dataset.games)]
    mix_pairs = [(i, j) for i in range(n_games) for j in range(i + 1, n_games)
                 if genres[i] == genres[j]]
    max_way = min(n_games, 20)

    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    w0 = rng.standard_normal((FEATURE_DIM, EMBED_DIM)) / np.sqrt(EMBED_DIM)
    q0 = rng.standard_normal((FEATURE_DIM, FEATURE_DIM)) / np.sqrt(FEATURE_DIM)
    k0 = rng.standard_normal((FEATURE_DIM, FEATURE_DIM)) / np.sqrt(FEATURE_DIM)
    v0 = rng.standard_normal((FEATURE_DIM, FEATURE_DIM)) / np.sqrt(FEATURE_DIM)
    trunk_w = torch.tensor(w0, dtype=torch.float32, requires_grad=True)
    trunk_b = torch.zeros(FEATURE_DIM, dtype=torch.float32, requires_grad=True)
    wq = torch.tensor(q0, dtype=torch.float32, requires_grad=True)
    wk = torch.tensor(k0, dtype=torch.float32, requires_grad=True)
    wv = torch.tensor(v0, dtype=torch.float32, requires_grad=True)
    temp = torch.tensor(10.0, dtype=torch.float32, requires_grad=True)
    opt = torch.optim.Adam([trunk_w, trunk_b, wq, wk, wv, temp], lr=lr)

    def features(x: torch.Tensor) -> torch.Tensor:
        return torch.tanh(x @ trunk_w.T + trunk_b)

    for _ in range(episodes):
        # the larger of two draws, biasing episodes toward crowded sets
        n_way = int(rng.integers(2, max_way + 1, size=2).max())
        n_new = 1 if n_way <= 3 else int(rng.integers(1, 3))
        n_mix = min(int(rng.binomial(n_way, mix_fraction)), len(mix_pairs))
        picked = [(int(i), int(i)) for i in
                  rng.choice(n_games, size=n_way - n_mix, replace=False)]
        if n_mix:
            picked += [mix_pairs[p] for p in
                       rng.choice(len(mix_pairs), size=n_mix, replace=False)]
        rng.shuffle(picked)
        support_counts = [base_pool] * (n_way - n_new) + [k_shot] * n_new
        support_rows = []
        query_rows = []
        labels = []
        for label, ((ga, gb), count) in enumerate(zip(picked, support_counts)):
            total = count + queries_per_class
            if ga == gb:
                pool = embs[ga]
                rows = pool[rng.choice(len(pool), size=total, replace=False)]
            else:
                lam = np.float32(rng.uniform(0.25, 0.75))
                pa, pb = embs[ga], embs[gb]
                rows = lam * pa[rng.choice(len(pa), size=total, replace=False)] \
                    + (1 - lam) * pb[rng.choice(len(pb), size=total, replace=False)]
            support_rows.append(rows[:count])
            query_rows.append(rows[count:])
            labels.extend([label] * queries_per_class)
        support = [torch.from_numpy(rows) for rows in support_rows]
        queries = torch.from_numpy(np.concatenate(query_rows, axis=0))
        target = torch.tensor(labels, dtype=torch.long)

        protos = torch.stack([features(rows).mean(dim=0) for rows in support])
        q = protos @ wq.T
        k = protos @ wk.T
        v = protos @ wv.T
        attn = torch.softmax((q @ k.T) / np.sqrt(FEATURE_DIM), dim=1)
        refined = protos + attn @ v
        vectors = refined / refined.norm(dim=1, keepdim=True).clamp_min(1e-12)

        qf = features(queries)
        qf = qf / qf.norm(dim=1, keepdim=True).clamp_min(1e-12)
        logits = temp * (qf @ vectors.T)
        loss = torch.nn.functional.cross_entropy(logits, target)
        if not torch.isfinite(loss):
            raise DivergenceError("task-mapper pretraining loss became non-finite")
        opt.zero_grad()
        loss.backward()
        opt.step()

    with torch.no_grad():
        return TaskMapperModel(
            trunk_weights=trunk_w.numpy().astype(np.float32).copy(),
            trunk_bias=trunk_b.numpy().astype(np.float32).copy(),
            query_weights=wq.numpy().astype(np.float32).copy(),
            key_weights=wk.numpy().astype(np.float32).copy(),
            value_weights=wv.numpy().astype(np.float32).copy(),
            temperature=float(temp.item()),
            seed=seed, trained_episodes=episodes)


# ---------------------------------------------------------------------------
# fixed-N baseline


@dataclass(eq=False)
class MetaBaselineModel:
    trunk_weights: np.ndarray
    trunk_bias: np.ndarray
    n_way: int
    k_shot: int
    seed: int = 0
    trained_episodes: int = 0


def meta_baseline(dataset: PretrainDataset, encoder: EncoderModel, n_way: int,
                  k_shot: int, episodes: int = 4000, seed: int = 0,
                  lr: float = 1e-3,
                  queries_per_class: int = 8) -> MetaBaselineModel:
    """Prototypical-network baseline locked to one way-count.

    Same trunk shape and episode budget as the incremental mapper, but every
    episode is exactly n_way-way, prototypes are plain K-shot means, and
    classification is by euclidean distance. There is no extension operation:
    deploying at a different N means training another one of these.
    """
    import torch

    if len(dataset.games) < max(5, n_way):
        raise InsufficientDataError(
            f"baseline needs at least {max(5, n_way)} games, dataset has {len(dataset.games)}")
    if episodes < 0:
        raise ValidationError("episodes must be >= 0")
    embs = _dataset_embeddings(dataset, encoder)
    per_class = min(len(block) for block in embs)
    if per_class < k_shot + queries_per_class:
        raise InsufficientDataError("not enough frames per game for an episode")

    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    w0 = rng.standard_normal((FEATURE_DIM, EMBED_DIM)) / np.sqrt(EMBED_DIM)
    trunk_w = torch.tensor(w0, dtype=torch.float32, requires_grad=True)
    trunk_b = torch.zeros(FEATURE_DIM, dtype=torch.float32, requires_grad=True)
    opt = torch.optim.Adam([trunk_w, trunk_b], lr=lr)

    for _ in range(episodes):
        picked = rng.choice(len(embs), size=n_way, replace=False)
        support_rows = []
        query_rows = []
        labels = []
        for label, game_idx in enumerate(picked):
            pool = embs[game_idx]
            idx = rng.choice(len(pool), size=k_shot + queries_per_class, replace=False)
            support_rows.append(pool[idx[:k_shot]])
            query_rows.append(pool[idx[k_shot:]])
            labels.extend([label] * queries_per_class)
        support = torch.from_numpy(np.stack(support_rows))         # (N, K, 512)
        queries = torch.from_numpy(np.concatenate(query_rows, axis=0))
        target = torch.tensor(labels, dtype=torch.long)

        feats = torch.tanh(support.reshape(-1, EMBED_DIM) @ trunk_w.T + trunk_b)
        protos = feats.reshape(n_way, k_shot, FEATURE_DIM).mean(dim=1)
        qf = torch.tanh(queries @ trunk_w.T + trunk_b)
        logits = -torch.cdist(qf, protos) ** 2
        loss = torch.nn.functional.cross_entropy(logits, target)
        if not torch.isfinite(loss):
            raise DivergenceError("baseline training loss became non-finite")
        opt.zero_grad()
        loss.backward()
        opt.step()

    with torch.no_grad():
        return MetaBaselineModel(trunk_weights=trunk_w.numpy().astype(np.float32).copy(),
                                 trunk_bias=trunk_b.numpy().astype(np.float32).copy(),
                                 n_way=n_way, k_shot=k_shot, seed=seed,
                                 trained_episodes=episodes)


def meta_classify(model: MetaBaselineModel, support: np.ndarray,
                  queries: np.ndarray) -> np.ndarray:
    """Nearest-prototype labels for queries given an (N, K, 512) support set."""
    support = np.asarray(support, dtype=np.float32)
    if support.ndim != 3 or support.shape[0] != model.n_way \
            or support.shape[1] != model.k_shot:
        raise ShapeError(
            f"support shape {support.shape} does not match fixed "
            f"{model.n_way}-way {model.k_shot}-shot baseline")
    feats = np.tanh(support.reshape(-1, EMBED_DIM) @ model.trunk_weights.T
                    + model.trunk_bias)
    protos = feats.reshape(model.n_way, model.k_shot, FEATURE_DIM).mean(axis=1)
    qf = np.tanh(np.asarray(queries, dtype=np.float32) @ model.trunk_weights.T
                 + model.trunk_bias)
    d2 = ((qf[:, None, :] - protos[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


# ---------------------------------------------------------------------------
# held-out episode evaluation, shared by both classifiers


def episode_accuracy(classify_fn, embs_by_class: list[np.ndarray], n_way: int,
                     k_shot: int, episodes: int, seed: int,
                     queries_per_class: int = 8) -> float:
    """Mean accuracy of classify_fn(support (N,K,512), queries) over freshly
    sampled episodes. Support and query draws never overlap inside an episode."""
    if len(embs_by_class) < n_way:
        raise InsufficientDataError(
            f"need {n_way} classes, have {len(embs_by_class)}")
    rng = np.random.default_rng(seed)
    hits = 0
    total = 0
    for _ in range(episodes):
        picked = rng.choice(len(embs_by_class), size=n_way, replace=False)
        support = []
        queries = []
        labels = []
        for label, class_idx in enumerate(picked):
            pool = embs_by_class[class_idx]
            idx = rng.choice(len(pool), size=k_shot + queries_per_class, replace=False)
            support.append(pool[idx[:k_shot]])
            queries.append(pool[idx[k_shot:]])
            labels.extend([label] * queries_per_class)
        predicted = classify_fn(np.stack(support), np.concatenate(queries, axis=0))
        hits += int(np.sum(np.asarray(predicted) == np.asarray(labels)))
        total += len(labels)
    return hits / total


def mapper_classifier(model: TaskMapperModel):
    """Adapter turning the incremental mapper into an episode classify_fn: the
    support set becomes a throwaway buffer, adaptation runs, queries route."""
    def classify(support: np.ndarray, queries: np.ndarray) -> np.ndarray:
        n, k, dim = support.shape
        buf = SupportBuffer(k=k, dim=dim,
                            class_ids=np.repeat(np.arange(n, dtype=np.uint16), k),
                            embeddings=support.reshape(-1, dim))
        adapted = extend_and_adapt(model, buf)
        return classify_queries(adapted, queries)
    return classify


def meta_classifier(model: MetaBaselineModel):
    def classify(support: np.ndarray, queries: np.ndarray) -> np.ndarray:
        return meta_classify(model, support, queries)
    return classify


# ---------------------------------------------------------------------------
# checkpoint io


def save_mapper(model: TaskMapperModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _MAGIC + struct.pack(
        "<IIIIfqI", _VERSION, model.n_classes, FEATURE_DIM, EMBED_DIM,
        model.temperature, model.seed, model.trained_episodes)
    blocks = []
    for block in (model.trunk_weights, model.trunk_bias, model.query_weights,
                  model.key_weights, model.value_weights, model.class_vectors):
        blocks.append(np.ascontiguousarray(block, dtype="<f4").tobytes())
    path.write_bytes(header + b"".join(blocks))
    return path


def load_mapper(path) -> TaskMapperModel:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"mapper checkpoint {path} does not exist")
    blob = path.read_bytes()
    if blob[:4] != _MAGIC:
        raise CheckpointError(f"{path} is not a task-mapper checkpoint")
    head_size = 4 + struct.calcsize("<IIIIfqI")
    version, n, feat, emb, temperature, seed, episodes = struct.unpack(
        "<IIIIfqI", blob[4:head_size])
    if version != _VERSION:
        raise SchemaVersionError(f"mapper checkpoint version {version} unsupported")
    counts = [feat * emb, feat, feat * feat, feat * feat, feat * feat, n * feat]
    if len(blob) != head_size + sum(counts) * 4:
        raise CheckpointError(f"{path} truncated")
    at = head_size
    arrays = []
    for count in counts:
        arrays.append(np.frombuffer(blob, dtype="<f4", count=count, offset=at).copy())
        at += count * 4
    return TaskMapperModel(trunk_weights=arrays[0].reshape(feat, emb),
                           trunk_bias=arrays[1],
                           query_weights=arrays[2].reshape(feat, feat),
                           key_weights=arrays[3].reshape(feat, feat),
                           value_weights=arrays[4].reshape(feat, feat),
                           temperature=temperature,
                           class_vectors=arrays[5].reshape(n, feat),
                           seed=seed, trained_episodes=episodes)


def save_prototype_head(class_vectors: np.ndarray, path) -> Path:
    """Standalone N-way head file, used when accounting for a fixed-N baseline
    that must keep one head per way-count it has ever deployed."""
    vectors = np.asarray(class_vectors, dtype=np.float32)
    if vectors.ndim != 2:
        raise ShapeError("prototype head must be a 2-d block")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEAD_MAGIC + struct.pack("<III", _VERSION, *vectors.shape)
    path.write_bytes(header + np.ascontiguousarray(vectors, dtype="<f4").tobytes())
    return path


def load_prototype_head(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != _HEAD_MAGIC:
        raise CheckpointError(f"{path} is not a prototype head file")
    version, n, dim = struct.unpack("<III", blob[4:16])
    if version != _VERSION:
        raise SchemaVersionError(f"head file version {version} unsupported")
    if len(blob) != 16 + n * dim * 4:
        raise CheckpointError(f"{path} truncated")
    return np.frombuffer(blob, dtype="<f4", offset=16).reshape(n, dim).copy()
