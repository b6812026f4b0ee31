import numpy as np
import pytest

from crossfuse.embedstore import (
    ChannelRole,
    EmbeddingMatrix,
    l2_normalize,
    read_embeddings,
    write_embeddings,
)
from crossfuse.errors import FormatError, ValidationError

from synth import unit_rows


def make_matrix(rows, ids, role=ChannelRole.PASSAGE_IMAGE, normalized=False):
    return EmbeddingMatrix(ids=ids, data=np.array(rows, dtype=np.float32), role=role, normalized=normalized)


def test_file_size_matches_layout(tmp_path):
    # 2x3 matrix: 4 magic + 1 role + 1 dtype + 4 dim + 8 count + 24 payload
    m = make_matrix([[1, 2, 3], [4, 5, 6]], ["a", "b"])
    path = tmp_path / "m.emb"
    write_embeddings(m, path)
    assert path.stat().st_size == 4 + 1 + 1 + 4 + 8 + 24
    assert (tmp_path / "m.emb.ids").read_text() == "a\nb"


def test_write_rejects_empty():
    m = make_matrix(np.zeros((0, 3), dtype=np.float32), [])
    with pytest.raises(ValidationError):
        write_embeddings(m, "/tmp/never-written.emb")


def test_write_rejects_duplicate_ids(tmp_path):
    m = make_matrix([[1, 0], [0, 1]], ["a", "a"])
    with pytest.raises(ValidationError, match="duplicate"):
        write_embeddings(m, tmp_path / "d.emb")


@pytest.mark.parametrize("seed", range(5))
def test_roundtrip_bit_for_bit(tmp_path, seed):
    rng = np.random.default_rng(seed)
    count, dim = int(rng.integers(1, 40)), int(rng.integers(1, 33))
    data = rng.standard_normal((count, dim)).astype(np.float32)
    ids = [f"doc-{seed}-{i}" for i in range(count)]
    role = list(ChannelRole)[seed % len(ChannelRole)]
    m = EmbeddingMatrix(ids=ids, data=data, role=role)
    path = tmp_path / "rt.emb"
    write_embeddings(m, path)
    back = read_embeddings(path)
    assert back.ids == ids
    assert back.role is role
    assert back.data.tobytes() == data.tobytes()


def test_read_rejects_bad_magic(tmp_path):
    m = make_matrix([[1.0, 0.0]], ["a"])
    path = tmp_path / "m.emb"
    write_embeddings(m, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="magic"):
        read_embeddings(path)


def test_read_rejects_truncated_payload(tmp_path):
    m = make_matrix([[1.0, 0.0], [0.0, 1.0]], ["a", "b"])
    path = tmp_path / "m.emb"
    write_embeddings(m, path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FormatError, match="size mismatch"):
        read_embeddings(path)


def test_read_rejects_sidecar_count_mismatch(tmp_path):
    m = make_matrix([[1.0], [2.0], [3.0]], ["a", "b", "c"])
    path = tmp_path / "m.emb"
    write_embeddings(m, path)
    (tmp_path / "m.emb.ids").write_text("a\nb")
    with pytest.raises(FormatError, match="count"):
        read_embeddings(path)


def test_read_rejects_nan_payload(tmp_path):
    m = make_matrix([[1.0, 2.0]], ["a"])
    path = tmp_path / "m.emb"
    write_embeddings(m, path)
    blob = bytearray(path.read_bytes())
    blob[-8:-4] = np.float32("nan").tobytes()
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="NaN"):
        read_embeddings(path)


def test_read_requires_sidecar(tmp_path):
    m = make_matrix([[1.0]], ["a"])
    path = tmp_path / "m.emb"
    write_embeddings(m, path)
    (tmp_path / "m.emb.ids").unlink()
    with pytest.raises(FormatError, match="sidecar"):
        read_embeddings(path)


def test_normalize_345_triangle():
    m = make_matrix([[3.0, 4.0]], ["a"])
    out = l2_normalize(m)
    assert np.allclose(out.data, [[0.6, 0.8]])
    assert out.normalized


def test_normalize_idempotent():
    rng = np.random.default_rng(0)
    m = make_matrix(rng.standard_normal((20, 7)), [f"r{i}" for i in range(20)])
    once = l2_normalize(m)
    twice = l2_normalize(once)
    assert np.max(np.abs(once.data - twice.data)) < 1e-7


def test_normalize_rejects_zero_row():
    m = make_matrix([[1.0, 1.0], [0.0, 0.0]], ["good", "bad"])
    with pytest.raises(ValidationError, match="bad"):
        l2_normalize(m)


@pytest.mark.parametrize("seed", range(4))
def test_normalize_property_unit_norms_and_cosines(seed):
    rng = np.random.default_rng(100 + seed)
    count, dim = 30, 9
    data = rng.standard_normal((count, dim)) * rng.uniform(0.1, 10.0, size=(count, 1))
    m = make_matrix(data, [f"r{i}" for i in range(count)])
    out = l2_normalize(m)
    norms = np.linalg.norm(out.data.astype(np.float64), axis=1)
    assert np.all(np.abs(norms - 1.0) <= 1e-5)
    assert out.ids == m.ids

    # cosine similarity preserved: cos of normalized rows == cos of originals
    orig = data.astype(np.float64)
    orig_cos = (orig @ orig.T) / np.outer(np.linalg.norm(orig, axis=1), np.linalg.norm(orig, axis=1))
    new = out.data.astype(np.float64)
    new_cos = new @ new.T / np.outer(np.linalg.norm(new, axis=1), np.linalg.norm(new, axis=1))
    assert np.max(np.abs(orig_cos - new_cos)) < 1e-6


def test_normalized_flag_recomputed_on_read(tmp_path):
    rng = np.random.default_rng(3)
    raw = make_matrix(rng.standard_normal((5, 4)) * 3, [f"r{i}" for i in range(5)])
    path = tmp_path / "raw.emb"
    write_embeddings(raw, path)
    assert not read_embeddings(path).normalized

    write_embeddings(l2_normalize(raw), path)
    assert read_embeddings(path).normalized


def test_unit_rows_helper_consistency():
    rng = np.random.default_rng(5)
    rows = rng.standard_normal((4, 6))
    assert np.allclose(np.linalg.norm(unit_rows(rows), axis=1), 1.0)
