"""Embedding matrices, cosine affinity kernels, and batch sampling.

This module owns the data layer of the pipeline: the SEMB binary file
format for embedding matrices, row normalization and centering, the
cosine affinity matrix between two batches, the row-wise softmax
kernel, and seeded sampling of semi-supervised batches (paired rows
plus unpaired rows from each side).

SEMB format: bytes 0-3 magic "SEMB"; bytes 4-7 uint32 little-endian
version = 1; bytes 8-15 uint64 row count n; bytes 16-23 uint64 feature
dimension d; then n*d IEEE-754 float32 little-endian values, row-major.
A sidecar `<file>.json` manifest records source name, modality tag and
a SHA-256 checksum of the binary file. Files store raw (un-normalized)
embeddings; normalization is an explicit pipeline step because teacher
fitting centers the data before any normalization.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DegenerateRowError, FormatError, ParameterError
from .rng import make_rng

SEMB_MAGIC = b"SEMB"
SEMB_VERSION = 1

AFFINITY_TOL = 1e-6
ZERO_ROW_TOL = 1e-12


@dataclass(frozen=True)
class EmbeddingMatrix:
    """n x d matrix of real feature rows, guaranteed finite and non-empty."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.dtype not in (np.float32, np.float64):
            v = v.astype(np.float64)
        if v.ndim != 2:
            raise DataError(f"embedding matrix must be 2-D, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise DataError(f"embedding matrix needs n >= 1 and d >= 1, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("embedding matrix contains NaN or Inf entries")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class AffinityMatrix:
    """Matrix of pairwise cosine similarities, entries in [-1, 1] up to tolerance."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DataError(f"affinity matrix must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("affinity matrix contains NaN or Inf entries")
        if v.size and (v.min() < -1.0 - AFFINITY_TOL or v.max() > 1.0 + AFFINITY_TOL):
            raise DataError("affinity entries outside [-1, 1] beyond tolerance 1e-6")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class PairedDataset:
    """Aligned embedding pair (A, B): row i of A corresponds to row i of B."""

    A: EmbeddingMatrix
    B: EmbeddingMatrix

    def __post_init__(self):
        if self.A.n != self.B.n:
            raise DataError(f"paired sides disagree on row count: {self.A.n} vs {self.B.n}")

    @property
    def n(self) -> int:
        return self.A.n


@dataclass(frozen=True)
class UnpairedPool:
    """Unpaired pools X and Y; no row correspondence is implied."""

    X: EmbeddingMatrix
    Y: EmbeddingMatrix


@dataclass(frozen=True)
class Batch:
    """Index sets drawn for one training step, with the seed that produced them."""

    paired_idx: np.ndarray
    unpaired_x_idx: np.ndarray
    unpaired_y_idx: np.ndarray
    seed: int

    def __post_init__(self):
        for name in ("paired_idx", "unpaired_x_idx", "unpaired_y_idx"):
            idx = np.asarray(getattr(self, name), dtype=np.int64)
            if np.unique(idx).size != idx.size:
                raise DataError(f"{name} contains duplicate indices")
            object.__setattr__(self, name, idx)


def as_embedding(E) -> EmbeddingMatrix:
    """Coerce an array-like into an EmbeddingMatrix (no-op if already one)."""
    if isinstance(E, EmbeddingMatrix):
        return E
    return EmbeddingMatrix(np.asarray(E, dtype=np.float64))


def as_matrix(K) -> np.ndarray:
    """Extract a float64 ndarray from an AffinityMatrix or array-like."""
    if isinstance(K, AffinityMatrix):
        return K.values
    return np.asarray(K, dtype=np.float64)


def write_embeddings(E, path, source: str = "", modality: str = "") -> Path:
    """Write an embedding matrix as a SEMB file plus its JSON sidecar manifest.

    Values are stored as float32; pass float32 data for bit-exact
    round-trips through `load_embeddings`.
    """
    E = as_embedding(E)
    path = Path(path)
    payload = E.values.astype("<f4").tobytes(order="C")
    header = SEMB_MAGIC + np.uint32(SEMB_VERSION).tobytes()
    header += np.uint64(E.n).tobytes() + np.uint64(E.d).tobytes()
    blob = header + payload
    path.write_bytes(blob)
    manifest = {
        "source": source,
        "modality": modality,
        "n": E.n,
        "d": E.d,
        "checksum_sha256": hashlib.sha256(blob).hexdigest(),
    }
    Path(str(path) + ".json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return path


def load_embeddings(path) -> EmbeddingMatrix:
    """Read a SEMB file back into an EmbeddingMatrix (float32 values).

    Raises FormatError on bad magic/version or size mismatch, DataError
    on non-finite entries.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise FormatError(f"{path}: file shorter than the 24-byte SEMB header")
    if raw[:4] != SEMB_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {SEMB_MAGIC!r}")
    version = int(np.frombuffer(raw, dtype="<u4", count=1, offset=4)[0])
    if version != SEMB_VERSION:
        raise FormatError(f"{path}: unsupported SEMB version {version}")
    n = int(np.frombuffer(raw, dtype="<u8", count=1, offset=8)[0])
    d = int(np.frombuffer(raw, dtype="<u8", count=1, offset=16)[0])
    expected = 24 + n * d * 4
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload holds {(len(raw) - 24) // 4} floats, header declares {n * d}"
        )
    values = np.frombuffer(raw, dtype="<f4", count=n * d, offset=24).reshape(n, d)
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: payload contains NaN or Inf entries")
    return EmbeddingMatrix(values.copy())


def row_norms(E) -> np.ndarray:
    """Euclidean norm of every row, computed in float64."""
    return np.linalg.norm(as_embedding(E).values.astype(np.float64, copy=False), axis=1)


def l2_normalize_rows(E) -> EmbeddingMatrix:
    """Scale every row to unit Euclidean norm; zero rows are a hard error."""
    E = as_embedding(E)
    norms = row_norms(E)
    if norms.min() < ZERO_ROW_TOL:
        raise DegenerateRowError(int(norms.argmin()), "l2_normalize_rows")
    return EmbeddingMatrix(E.values.astype(np.float64, copy=False) / norms[:, None])


def center_rows(E) -> tuple[EmbeddingMatrix, np.ndarray]:
    """Subtract the column means; returns (centered matrix, subtracted mean)."""
    E = as_embedding(E)
    values = E.values.astype(np.float64, copy=False)
    mean = values.mean(axis=0)
    return EmbeddingMatrix(values - mean), mean


def cosine_affinity(U, V) -> AffinityMatrix:
    """Pairwise cosine similarities between the rows of U and the rows of V.

    Entry (i, j) is <U_i, V_j> / (|U_i| |V_j|). Accumulation is in
    float64 regardless of input storage so that the unit diagonal of
    self-affinities holds to 1e-7.
    """
    U, V = as_embedding(U), as_embedding(V)
    if U.d != V.d:
        raise ParameterError(f"cosine_affinity: dimension mismatch {U.d} vs {V.d}")
    un = row_norms(U)
    vn = row_norms(V)
    if un.min() < ZERO_ROW_TOL:
        raise DegenerateRowError(int(un.argmin()), "cosine_affinity (left)")
    if vn.min() < ZERO_ROW_TOL:
        raise DegenerateRowError(int(vn.argmin()), "cosine_affinity (right)")
    Un = U.values.astype(np.float64, copy=False) / un[:, None]
    Vn = V.values.astype(np.float64, copy=False) / vn[:, None]
    return AffinityMatrix(Un @ Vn.T)


def row_softmax(K, epsilon: float) -> np.ndarray:
    """Row-wise softmax of K at temperature epsilon, with max-subtraction.

    Each output row is nonnegative and sums to 1; entries whose scaled
    gap exceeds the float64 exponent range underflow to exactly 0.
    """
    if epsilon <= 0:
        raise ParameterError(f"row_softmax: epsilon must be > 0, got {epsilon}")
    K = as_matrix(K)
    shifted = (K - K.max(axis=1, keepdims=True)) / epsilon
    S = np.exp(shifted)
    return S / S.sum(axis=1, keepdims=True)


def sample_batch(
    paired: PairedDataset,
    pool: UnpairedPool,
    n_pair: int,
    n_unpaired_x: int,
    n_unpaired_y: int,
    seed: int,
) -> Batch:
    """Sample a batch of paired and unpaired row indices, without replacement.

    Sampling is uniform within each list and fresh per call; the same
    seed always reproduces the same Batch.
    """
    for count, avail, name in (
        (n_pair, paired.n, "paired"),
        (n_unpaired_x, pool.X.n, "unpaired_x"),
        (n_unpaired_y, pool.Y.n, "unpaired_y"),
    ):
        if count < 0 or count > avail:
            raise ParameterError(f"sample_batch: requested {count} {name} rows, have {avail}")
    rng = make_rng(seed)
    paired_idx = rng.choice(paired.n, size=n_pair, replace=False)
    x_idx = rng.choice(pool.X.n, size=n_unpaired_x, replace=False)
    y_idx = rng.choice(pool.Y.n, size=n_unpaired_y, replace=False)
    return Batch(paired_idx, x_idx, y_idx, seed)
