import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sotalign import (
    Batch,
    DataError,
    DegenerateRowError,
    EmbeddingMatrix,
    FormatError,
    PairedDataset,
    ParameterError,
    UnpairedPool,
    center_rows,
    cosine_affinity,
    l2_normalize_rows,
    load_embeddings,
    row_softmax,
    sample_batch,
    write_embeddings,
)


def make_paired(n, d_x, d_y, seed=0):
    rng = np.random.default_rng(seed)
    return PairedDataset(
        EmbeddingMatrix(rng.standard_normal((n, d_x))),
        EmbeddingMatrix(rng.standard_normal((n, d_y))),
    )


class TestEmbeddingMatrix:
    def test_rejects_nan(self):
        with pytest.raises(DataError):
            EmbeddingMatrix(np.array([[1.0, np.nan]]))

    def test_rejects_empty(self):
        with pytest.raises(DataError):
            EmbeddingMatrix(np.zeros((0, 3)))

    def test_shape_properties(self):
        E = EmbeddingMatrix(np.ones((4, 7)))
        assert (E.n, E.d) == (4, 7)


class TestSembFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        E = EmbeddingMatrix(rng.standard_normal((17, 5)).astype(np.float32))
        path = write_embeddings(E, tmp_path / "e.semb", source="test", modality="image")
        back = load_embeddings(path)
        assert back.values.dtype == np.float32
        assert np.array_equal(back.values, E.values)

    def test_manifest_written(self, tmp_path):
        import json

        E = EmbeddingMatrix(np.ones((2, 2), dtype=np.float32))
        path = write_embeddings(E, tmp_path / "e.semb", source="synthetic", modality="text")
        manifest = json.loads((tmp_path / "e.semb.json").read_text())
        assert manifest["source"] == "synthetic"
        assert manifest["modality"] == "text"
        assert len(manifest["checksum_sha256"]) == 64

    def test_known_layout(self, tmp_path):
        # hand-built file: n=2, d=3, six known floats
        floats = [1.0, 2.0, 3.0, -1.5, 0.25, 4.0]
        blob = b"SEMB" + struct.pack("<I", 1) + struct.pack("<Q", 2) + struct.pack("<Q", 3)
        blob += struct.pack("<6f", *floats)
        p = tmp_path / "hand.semb"
        p.write_bytes(blob)
        E = load_embeddings(p)
        assert np.array_equal(E.values, np.array(floats, dtype=np.float32).reshape(2, 3))

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.semb"
        p.write_bytes(b"XXXX" + bytes(20))
        with pytest.raises(FormatError):
            load_embeddings(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "bad.semb"
        p.write_bytes(b"SEMB" + struct.pack("<I", 9) + struct.pack("<QQ", 1, 1) + struct.pack("<f", 0))
        with pytest.raises(FormatError):
            load_embeddings(p)

    def test_truncated_payload(self, tmp_path):
        blob = b"SEMB" + struct.pack("<I", 1) + struct.pack("<Q", 2) + struct.pack("<Q", 3)
        blob += struct.pack("<5f", *range(5))  # header says 6 floats
        p = tmp_path / "trunc.semb"
        p.write_bytes(blob)
        with pytest.raises(FormatError):
            load_embeddings(p)

    def test_nan_payload(self, tmp_path):
        blob = b"SEMB" + struct.pack("<I", 1) + struct.pack("<QQ", 1, 2)
        blob += struct.pack("<2f", np.nan, 1.0)
        p = tmp_path / "nan.semb"
        p.write_bytes(blob)
        with pytest.raises(DataError):
            load_embeddings(p)


class TestNormalizeCenter:
    def test_three_four_five(self):
        out = l2_normalize_rows(EmbeddingMatrix(np.array([[3.0, 4.0]])))
        np.testing.assert_allclose(out.values, [[0.6, 0.8]], atol=1e-12)

    def test_axis_rows(self):
        out = l2_normalize_rows(EmbeddingMatrix(np.array([[1.0, 0.0], [0.0, 2.0]])))
        np.testing.assert_allclose(out.values, np.eye(2), atol=1e-12)

    def test_zero_row_rejected(self):
        with pytest.raises(DegenerateRowError) as exc:
            l2_normalize_rows(EmbeddingMatrix(np.array([[0.0, 0.0]])))
        assert exc.value.row == 0

    def test_unit_norms(self):
        rng = np.random.default_rng(0)
        out = l2_normalize_rows(EmbeddingMatrix(rng.standard_normal((40, 9))))
        np.testing.assert_allclose(np.linalg.norm(out.values, axis=1), 1.0, atol=1e-7)

    def test_center_basic(self):
        out, mean = center_rows(EmbeddingMatrix(np.array([[1.0], [3.0]])))
        np.testing.assert_allclose(out.values, [[-1.0], [1.0]])
        np.testing.assert_allclose(mean, [2.0])

    def test_center_idempotent(self):
        rng = np.random.default_rng(1)
        E = EmbeddingMatrix(rng.standard_normal((30, 4)))
        centered, _ = center_rows(E)
        again, mean = center_rows(centered)
        np.testing.assert_allclose(again.values, centered.values, atol=1e-7)
        np.testing.assert_allclose(mean, 0.0, atol=1e-7)

    def test_center_single_row(self):
        out, mean = center_rows(EmbeddingMatrix(np.array([[5.0, 5.0]])))
        np.testing.assert_allclose(out.values, [[0.0, 0.0]])
        np.testing.assert_allclose(mean, [5.0, 5.0])

    def test_center_means_vanish(self):
        rng = np.random.default_rng(2)
        out, _ = center_rows(EmbeddingMatrix(100 + rng.standard_normal((64, 6))))
        assert np.abs(out.values.mean(axis=0)).max() < 1e-7


class TestCosineAffinity:
    def test_orthogonal(self):
        K = cosine_affinity(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
        np.testing.assert_allclose(K.values, [[0.0]], atol=1e-12)

    def test_self_similarity(self):
        K = cosine_affinity(np.array([[3.0, 4.0]]), np.array([[3.0, 4.0]]))
        np.testing.assert_allclose(K.values, [[1.0]], atol=1e-12)

    def test_analytic_case(self):
        K = cosine_affinity(np.array([[1.0, 0.0], [1.0, 1.0]]), np.array([[1.0, 0.0]]))
        np.testing.assert_allclose(K.values, [[1.0], [0.70710678]], atol=1e-8)

    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            cosine_affinity(np.ones((2, 3)), np.ones((2, 4)))

    def test_zero_row(self):
        with pytest.raises(DegenerateRowError):
            cosine_affinity(np.array([[0.0, 0.0]]), np.ones((1, 2)))

    def test_unit_diagonal(self):
        rng = np.random.default_rng(4)
        U = rng.standard_normal((50, 12)) * rng.uniform(0.1, 10, (50, 1))
        K = cosine_affinity(U, U)
        np.testing.assert_allclose(np.diag(K.values), 1.0, atol=1e-7)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_row_rescaling_invariance(self, seed):
        rng = np.random.default_rng(seed)
        U = rng.standard_normal((6, 5))
        V = rng.standard_normal((4, 5))
        su = rng.uniform(0.5, 3.0, (6, 1))
        sv = rng.uniform(0.5, 3.0, (4, 1))
        K1 = cosine_affinity(U, V).values
        K2 = cosine_affinity(U * su, V * sv).values
        np.testing.assert_allclose(K1, K2, atol=1e-7)


class TestRowSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(row_softmax(np.array([[0.0, 0.0]]), 1.0), [[0.5, 0.5]])

    def test_analytic(self):
        S = row_softmax(np.array([[np.log(2.0), 0.0]]), 1.0)
        np.testing.assert_allclose(S, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-12)

    def test_underflow_clamps_to_zero(self):
        S = row_softmax(np.array([[1.0, 0.0]]), 1e-3)
        assert S[0, 0] == pytest.approx(1.0)
        assert S[0, 1] == 0.0

    def test_bad_epsilon(self):
        with pytest.raises(ParameterError):
            row_softmax(np.zeros((2, 2)), 0.0)

    @given(st.integers(0, 2**32 - 1), st.sampled_from([1e-3, 1e-2, 1.0]))
    @settings(max_examples=30, deadline=None)
    def test_rows_sum_to_one(self, seed, eps):
        rng = np.random.default_rng(seed)
        K = rng.uniform(-1.0, 1.0, (7, 9))
        S = row_softmax(K, eps)
        assert (S >= 0).all()
        np.testing.assert_allclose(S.sum(axis=1), 1.0, atol=1e-9)


class TestSampleBatch:
    def test_full_permutation(self):
        paired = make_paired(10, 3, 3)
        pool = UnpairedPool(paired.A, paired.B)
        batch = sample_batch(paired, pool, 10, 0, 0, seed=5)
        assert sorted(batch.paired_idx) == list(range(10))

    def test_determinism(self):
        paired = make_paired(20, 3, 4)
        pool = UnpairedPool(paired.A, paired.B)
        b1 = sample_batch(paired, pool, 8, 5, 7, seed=42)
        b2 = sample_batch(paired, pool, 8, 5, 7, seed=42)
        assert np.array_equal(b1.paired_idx, b2.paired_idx)
        assert np.array_equal(b1.unpaired_x_idx, b2.unpaired_x_idx)
        assert np.array_equal(b1.unpaired_y_idx, b2.unpaired_y_idx)

    def test_count_overflow(self):
        paired = make_paired(5, 2, 2)
        pool = UnpairedPool(paired.A, paired.B)
        with pytest.raises(ParameterError):
            sample_batch(paired, pool, 6, 0, 0, seed=0)

    def test_overlap_matches_hypergeometric_expectation(self):
        # two independent draws of 500 from 1000: E|intersection| = 250,
        # SD ~ 7.9, so the mean over 100 seed pairs sits within ~4 of 250
        paired = make_paired(1000, 2, 2, seed=9)
        pool = UnpairedPool(paired.A, paired.B)
        overlaps = []
        for k in range(100):
            b1 = sample_batch(paired, pool, 500, 0, 0, seed=2 * k)
            b2 = sample_batch(paired, pool, 500, 0, 0, seed=2 * k + 1)
            assert not np.array_equal(np.sort(b1.paired_idx), np.sort(b2.paired_idx))
            overlaps.append(len(set(b1.paired_idx) & set(b2.paired_idx)))
        assert abs(np.mean(overlaps) - 250.0) < 4.0

    def test_duplicate_indices_rejected(self):
        with pytest.raises(DataError):
            Batch(np.array([1, 1]), np.array([], dtype=int), np.array([], dtype=int), 0)
