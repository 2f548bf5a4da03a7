"""Support buffer: K stored embeddings per learnt task.

The buffer is the only data the deployment keeps between sessions. It exists
so the task-mapper can re-adapt over every class seen so far, and its
serialized size is what the BS/BG metrics report. Entries are embeddings
rather than frames, which keeps each record at 512 floats.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointError,
    InsufficientDataError,
    SchemaVersionError,
    ValidationError,
)

_MAGIC = b"DLSB"
_VERSION = 1

EMBED_DIM = 512


@dataclass(eq=False)
class SupportBuffer:
    k: int
    dim: int = EMBED_DIM
    class_ids: np.ndarray = field(default=None)   # (n,) uint16
    embeddings: np.ndarray = field(default=None)  # (n, dim) float32

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValidationError("per-class quota K must be >= 1")
        if self.class_ids is None:
            self.class_ids = np.zeros(0, dtype=np.uint16)
        if self.embeddings is None:
            self.embeddings = np.zeros((0, self.dim), dtype=np.float32)
        self.class_ids = np.asarray(self.class_ids, dtype=np.uint16)
        self.embeddings = np.asarray(self.embeddings, dtype=np.float32)
        self.validate()

    @property
    def n_classes(self) -> int:
        return 0 if len(self.class_ids) == 0 else int(self.class_ids.max()) + 1

    def __len__(self) -> int:
        return len(self.class_ids)

    def validate(self) -> None:
        """Check the N*K shape invariant: contiguous class ids, K entries each."""
        if self.embeddings.shape != (len(self.class_ids), self.dim):
            raise ValidationError(
                f"buffer embeddings shape {self.embeddings.shape} does not match "
                f"{len(self.class_ids)} entries of dim {self.dim}")
        counts = np.bincount(self.class_ids, minlength=self.n_classes)
        if self.n_classes and (len(counts) != self.n_classes or
                               not np.all(counts == self.k)):
            raise ValidationError(
                "buffer classes must be contiguous with exactly K entries each"
                f" (K={self.k}, counts={counts.tolist()})")

    def entries_for(self, class_id: int) -> np.ndarray:
        if not 0 <= class_id < self.n_classes:
            raise ValidationError(f"class {class_id} not in buffer")
        return self.embeddings[self.class_ids == class_id]

    def grouped(self) -> np.ndarray:
        """All entries as an (N, K, dim) block in class order."""
        return np.stack([self.entries_for(c) for c in range(self.n_classes)])


def selective_sample(collected: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Pick K of the collected embeddings, uniformly without replacement.

    The draw is seeded and the chosen rows come back in ascending original
    index order, so the result is fully reproducible.
    """
    collected = np.asarray(collected, dtype=np.float32)
    if collected.ndim != 2:
        raise ValidationError("collected embeddings must be a 2-d array")
    if len(collected) < k:
        raise InsufficientDataError(
            f"need at least {k} collected embeddings, have {len(collected)}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(collected), size=k, replace=False))
    return collected[idx].copy()


def merge(buffer: SupportBuffer, class_id: int, sampled: np.ndarray) -> SupportBuffer:
    """Append one new class of exactly K entries; class ids are append-only."""
    sampled = np.asarray(sampled, dtype=np.float32)
    if class_id != buffer.n_classes:
        raise ValidationError(
            f"class id {class_id} breaks contiguity, next class is {buffer.n_classes}")
    if sampled.shape != (buffer.k, buffer.dim):
        raise ValidationError(
            f"expected {buffer.k} samples of dim {buffer.dim}, got {sampled.shape}")
    ids = np.concatenate([buffer.class_ids,
                          np.full(buffer.k, class_id, dtype=np.uint16)])
    embs = np.concatenate([buffer.embeddings, sampled], axis=0)
    return SupportBuffer(k=buffer.k, dim=buffer.dim, class_ids=ids, embeddings=embs)


# ---------------------------------------------------------------------------
# serialization: header {version, N, K, dim} then fixed-width records


def serialize_buffer(buffer: SupportBuffer) -> bytes:
    buffer.validate()
    header = _MAGIC + struct.pack("<IIII", _VERSION, buffer.n_classes,
                                  buffer.k, buffer.dim)
    parts = [header]
    for cid, emb in zip(buffer.class_ids, buffer.embeddings):
        parts.append(struct.pack("<H", int(cid)))
        parts.append(np.ascontiguousarray(emb, dtype="<f4").tobytes())
    return b"".join(parts)


def size_kb(buffer: SupportBuffer) -> float:
    return len(serialize_buffer(buffer)) / 1024.0


def save_buffer(buffer: SupportBuffer, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize_buffer(buffer))
    return path


def load_buffer(path) -> SupportBuffer:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"buffer file {path} does not exist")
    blob = path.read_bytes()
    if blob[:4] != _MAGIC:
        raise CheckpointError(f"{path} is not a support buffer file")
    version, n, k, dim = struct.unpack("<IIII", blob[4:20])
    if version != _VERSION:
        raise SchemaVersionError(f"buffer file version {version} unsupported")
    record = 2 + dim * 4
    expected = 20 + n * k * record
    if len(blob) != expected:
        raise CheckpointError(f"{path} truncated ({len(blob)} vs {expected} bytes)")
    ids = np.zeros(n * k, dtype=np.uint16)
    embs = np.zeros((n * k, dim), dtype=np.float32)
    at = 20
    for i in range(n * k):
        ids[i] = struct.unpack_from("<H", blob, at)[0]
        embs[i] = np.frombuffer(blob, dtype="<f4", count=dim, offset=at + 2)
        at += record
    return SupportBuffer(k=k, dim=dim, class_ids=ids, embeddings=embs)
