"""Support buffer: shape invariants, sampling, merge, binary format."""

import struct

import numpy as np
import pytest

from dellbench.buffer import (
    SupportBuffer,
    load_buffer,
    merge,
    save_buffer,
    selective_sample,
    serialize_buffer,
    size_kb,
)
from dellbench.errors import (
    CheckpointError,
    InsufficientDataError,
    SchemaVersionError,
    ValidationError,
)


def _filled(n_classes: int, k: int, dim: int, seed: int = 0) -> SupportBuffer:
    rng = np.random.default_rng(seed)
    ids = np.repeat(np.arange(n_classes, dtype=np.uint16), k)
    embs = rng.standard_normal((n_classes * k, dim)).astype(np.float32)
    return SupportBuffer(k=k, dim=dim, class_ids=ids, embeddings=embs)


# ---------------------------------------------------------------------------
# invariants


def test_empty_buffer_has_no_classes() -> None:
    buf = SupportBuffer(k=5, dim=8)
    assert len(buf) == 0
    assert buf.n_classes == 0


def test_quota_must_be_positive() -> None:
    with pytest.raises(ValidationError):
        SupportBuffer(k=0, dim=8)


def test_validate_rejects_ragged_classes() -> None:
    ids = np.array([0, 0, 1], dtype=np.uint16)  # class 1 has 1 of 2 entries
    embs = np.zeros((3, 4), dtype=np.float32)
    with pytest.raises(ValidationError):
        SupportBuffer(k=2, dim=4, class_ids=ids, embeddings=embs)


def test_validate_rejects_class_gap() -> None:
    ids = np.array([0, 0, 2, 2], dtype=np.uint16)  # class 1 missing
    embs = np.zeros((4, 4), dtype=np.float32)
    with pytest.raises(ValidationError):
        SupportBuffer(k=2, dim=4, class_ids=ids, embeddings=embs)


def test_validate_rejects_shape_mismatch() -> None:
    ids = np.array([0, 0], dtype=np.uint16)
    embs = np.zeros((2, 5), dtype=np.float32)
    with pytest.raises(ValidationError):
        SupportBuffer(k=2, dim=4, class_ids=ids, embeddings=embs)


def test_entries_and_grouped_agree() -> None:
    buf = _filled(3, 4, 16)
    block = buf.grouped()
    assert block.shape == (3, 4, 16)
    for c in range(3):
        assert np.array_equal(block[c], buf.entries_for(c))
    with pytest.raises(ValidationError):
        buf.entries_for(3)
    with pytest.raises(ValidationError):
        buf.entries_for(-1)


# ---------------------------------------------------------------------------
# sampling and merging


def test_selective_sample_is_reproducible() -> None:
    pool = np.arange(40, dtype=np.float32).reshape(20, 2)
    a = selective_sample(pool, 5, seed=42)
    b = selective_sample(pool, 5, seed=42)
    assert np.array_equal(a, b)
    assert a.shape == (5, 2)


def test_selective_sample_preserves_collection_order() -> None:
    """Chosen rows come back in ascending original index order, so the
    stored support set never depends on rng internals beyond the draw."""
    pool = np.arange(100, dtype=np.float32).reshape(50, 2)
    out = selective_sample(pool, 10, seed=3)
    first_col = out[:, 0]
    assert np.all(np.diff(first_col) > 0)


def test_selective_sample_draws_without_replacement() -> None:
    pool = np.arange(24, dtype=np.float32).reshape(12, 2)
    out = selective_sample(pool, 12, seed=0)
    assert np.array_equal(out, pool)  # k == n forces every row exactly once


def test_selective_sample_needs_enough_rows() -> None:
    pool = np.zeros((3, 2), dtype=np.float32)
    with pytest.raises(InsufficientDataError):
        selective_sample(pool, 4, seed=0)
    with pytest.raises(ValidationError):
        selective_sample(np.zeros(6, dtype=np.float32), 2, seed=0)


def test_merge_appends_one_class() -> None:
    buf = _filled(2, 3, 8, seed=1)
    new = np.full((3, 8), 7.0, dtype=np.float32)
    grown = merge(buf, 2, new)
    assert grown.n_classes == 3
    assert len(grown) == 9
    # old rows are untouched, new rows land at the end
    assert np.array_equal(grown.embeddings[:6], buf.embeddings)
    assert np.array_equal(grown.entries_for(2), new)


def test_merge_enforces_contiguity() -> None:
    buf = _filled(2, 3, 8)
    new = np.zeros((3, 8), dtype=np.float32)
    with pytest.raises(ValidationError):
        merge(buf, 1, new)  # already present
    with pytest.raises(ValidationError):
        merge(buf, 3, new)  # skips class 2


def test_merge_enforces_quota_shape() -> None:
    buf = _filled(1, 3, 8)
    with pytest.raises(ValidationError):
        merge(buf, 1, np.zeros((2, 8), dtype=np.float32))
    with pytest.raises(ValidationError):
        merge(buf, 1, np.zeros((3, 9), dtype=np.float32))


def test_merge_does_not_mutate_input() -> None:
    buf = _filled(1, 2, 4)
    before = buf.embeddings.copy()
    merge(buf, 1, np.ones((2, 4), dtype=np.float32))
    assert np.array_equal(buf.embeddings, before)
    assert buf.n_classes == 1


# ---------------------------------------------------------------------------
# binary format


def test_serialized_size_formula() -> None:
    # header is 4 magic + 16 header bytes; each record is 2 id bytes + 4*dim
    for n, k, dim in ((1, 1, 4), (3, 5, 512), (2, 7, 64)):
        buf = _filled(n, k, dim)
        blob = serialize_buffer(buf)
        assert len(blob) == 20 + n * k * (2 + 4 * dim)
        assert size_kb(buf) == pytest.approx(len(blob) / 1024.0, rel=1e-12)


def test_serialize_header_layout() -> None:
    buf = _filled(3, 5, 16, seed=9)
    blob = serialize_buffer(buf)
    assert blob[:4] == b"DLSB"
    version, n, k, dim = struct.unpack("<IIII", blob[4:20])
    assert (version, n, k, dim) == (1, 3, 5, 16)
    # first record: uint16 class id then dim little-endian float32s
    cid = struct.unpack_from("<H", blob, 20)[0]
    assert cid == 0
    row = np.frombuffer(blob, dtype="<f4", count=16, offset=22)
    assert np.array_equal(row, buf.embeddings[0])


def test_save_load_roundtrip(tmp_path) -> None:
    buf = _filled(4, 3, 32, seed=5)
    path = save_buffer(buf, tmp_path / "buffer.bin")
    back = load_buffer(path)
    assert back.k == buf.k and back.dim == buf.dim
    assert np.array_equal(back.class_ids, buf.class_ids)
    assert np.array_equal(back.embeddings, buf.embeddings)


def test_empty_buffer_roundtrip(tmp_path) -> None:
    buf = SupportBuffer(k=5, dim=512)
    back = load_buffer(save_buffer(buf, tmp_path / "empty.bin"))
    assert len(back) == 0 and back.k == 5 and back.dim == 512


def test_load_rejects_bad_magic(tmp_path) -> None:
    path = tmp_path / "bad.bin"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(CheckpointError):
        load_buffer(path)


def test_load_rejects_truncation(tmp_path) -> None:
    buf = _filled(2, 3, 8)
    blob = serialize_buffer(buf)
    path = tmp_path / "cut.bin"
    path.write_bytes(blob[:-1])
    with pytest.raises(CheckpointError):
        load_buffer(path)
    path.write_bytes(blob + b"\x00")
    with pytest.raises(CheckpointError):
        load_buffer(path)


def test_load_rejects_unknown_version(tmp_path) -> None:
    buf = _filled(1, 1, 4)
    blob = bytearray(serialize_buffer(buf))
    blob[4:8] = struct.pack("<I", 99)
    path = tmp_path / "future.bin"
    path.write_bytes(bytes(blob))
    with pytest.raises(SchemaVersionError):
        load_buffer(path)


def test_load_missing_file(tmp_path) -> None:
    with pytest.raises(CheckpointError):
        load_buffer(tmp_path / "absent.bin")
