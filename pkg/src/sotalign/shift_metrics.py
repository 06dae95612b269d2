"""Distribution-shift metrics and the mutual k-NN diagnostic.

Sliced Wasserstein projects two point clouds onto seeded random
directions and averages closed-form 1-D transport costs. The spherical
variant respects directional data: points are projected onto random
great circles (2-D subspaces), renormalized onto the circle, and
matched by exact circular 1-D transport, where the optimal coupling of
equal-size sorted samples is one of the n cyclic shifts. The total
shift between an unpaired pool and a paired set is the sum of the
per-side spherical distances. Mutual k-NN scores how much the k-nearest
neighbor structure of two row-aligned spaces overlaps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import (
    PairedDataset,
    UnpairedPool,
    as_embedding,
    cosine_affinity,
    l2_normalize_rows,
    row_norms,
)
from .errors import DataError, ParameterError
from .rng import derive_seed, make_rng

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ShiftReport:
    """Per-side spherical sliced Wasserstein distances and their sum."""

    ssw_x: float
    ssw_y: float
    total: float
    n_projections: int
    p: float
    seed: int


def _quantile_grid(n: int, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # shared breakpoints of the two empirical quantile functions
    edges = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    weights = np.diff(np.concatenate(([0.0], edges)))
    mids = edges - weights / 2.0
    ia = np.minimum((mids * n).astype(np.int64), n - 1)
    ib = np.minimum((mids * m).astype(np.int64), m - 1)
    return weights, ia, ib


def wasserstein_1d(a, b, p: float = 2.0) -> float:
    """p-Wasserstein distance between two 1-D samples with uniform weights.

    Equal sizes reduce to sorting and matching monotonically; unequal
    sizes are handled exactly by quantile matching.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise DataError("wasserstein_1d: empty input")
    if p < 1:
        raise ParameterError(f"wasserstein_1d: p must be >= 1, got {p}")
    a_sorted = np.sort(a)
    b_sorted = np.sort(b)
    if a.size == b.size:
        cost = np.mean(np.abs(a_sorted - b_sorted) ** p)
    else:
        weights, ia, ib = _quantile_grid(a.size, b.size)
        cost = np.sum(weights * np.abs(a_sorted[ia] - b_sorted[ib]) ** p)
    return float(cost ** (1.0 / p))


def sliced_wasserstein(X, Y, n_proj: int = 500, p: float = 2.0, seed: int = 0) -> float:
    """Monte-Carlo sliced Wasserstein distance between two point clouds.

    Draws n_proj directions uniformly on the unit sphere from the seed,
    projects both clouds, and aggregates ((1/N) sum W_p^p)^(1/p).
    """
    X, Y = as_embedding(X), as_embedding(Y)
    if X.d != Y.d:
        raise ParameterError(f"sliced_wasserstein: dimension mismatch {X.d} vs {Y.d}")
    if n_proj < 1:
        raise ParameterError(f"sliced_wasserstein: n_proj must be >= 1, got {n_proj}")
    rng = make_rng(seed)
    dirs = rng.standard_normal((n_proj, X.d))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    proj_x = np.sort(X.values @ dirs.T, axis=0)  # (n, n_proj)
    proj_y = np.sort(Y.values @ dirs.T, axis=0)
    if X.n == Y.n:
        costs = np.mean(np.abs(proj_x - proj_y) ** p, axis=0)
    else:
        weights, ia, ib = _quantile_grid(X.n, Y.n)
        costs = np.sum(weights[:, None] * np.abs(proj_x[ia] - proj_y[ib]) ** p, axis=0)
    return float(np.mean(costs) ** (1.0 / p))


def _circular_cost(angles_a: np.ndarray, angles_b: np.ndarray, p: float) -> float:
    # min over the n cyclic shifts of the sorted matching, geodesic metric
    n = angles_a.size
    a_sorted = np.sort(angles_a)
    b_sorted = np.sort(angles_b)
    delta = np.abs(a_sorted[:, None] - b_sorted[None, :])
    geo = np.minimum(delta, TWO_PI - delta) ** p
    shifts = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
    costs = geo[np.arange(n)[:, None], shifts].sum(axis=0)
    return float(costs.min() / n)


def circular_wasserstein_1d(angles_a, angles_b, p: float = 2.0) -> float:
    """Exact p-Wasserstein distance between equal-size angle samples on
    the circle, minimizing the sorted-matching cost over all cut points."""
    a = np.asarray(angles_a, dtype=np.float64).ravel() % TWO_PI
    b = np.asarray(angles_b, dtype=np.float64).ravel() % TWO_PI
    if a.size != b.size:
        raise ParameterError(f"circular_wasserstein_1d: sizes differ, {a.size} vs {b.size}")
    if a.size == 0:
        raise DataError("circular_wasserstein_1d: empty input")
    return _circular_cost(a, b, p) ** (1.0 / p)


def spherical_sliced_wasserstein(X, Y, n_proj: int = 500, p: float = 2.0, seed: int = 0) -> float:
    """Sliced Wasserstein for unit-norm rows using great-circle projections.

    Each slice draws a random 2-D subspace, projects both clouds onto
    it, renormalizes to the circle, and runs exact circular transport
    on the angles; slices aggregate as ((1/N) sum W_p^p)^(1/p).
    Requires equal sample counts and rows within 1e-5 of unit norm.
    """
    X, Y = as_embedding(X), as_embedding(Y)
    if X.d != Y.d:
        raise ParameterError(f"spherical_sliced_wasserstein: dimension mismatch {X.d} vs {Y.d}")
    if X.n != Y.n:
        raise ParameterError(
            f"spherical_sliced_wasserstein needs equal sample counts, got {X.n} vs {Y.n}; "
            "subsample (see total_ssw) before calling"
        )
    if X.d < 2:
        raise ParameterError("spherical_sliced_wasserstein needs d >= 2")
    for name, E in (("X", X), ("Y", Y)):
        if np.abs(row_norms(E) - 1.0).max() > 1e-5:
            raise DataError(f"spherical_sliced_wasserstein: rows of {name} are not unit-norm")
    rng = make_rng(seed)
    acc = 0.0
    for _ in range(n_proj):
        basis, _ = np.linalg.qr(rng.standard_normal((X.d, 2)))
        zx = X.values @ basis
        zy = Y.values @ basis
        zx /= np.maximum(np.linalg.norm(zx, axis=1, keepdims=True), 1e-12)
        zy /= np.maximum(np.linalg.norm(zy, axis=1, keepdims=True), 1e-12)
        ang_x = np.arctan2(zx[:, 1], zx[:, 0]) % TWO_PI
        ang_y = np.arctan2(zy[:, 1], zy[:, 0]) % TWO_PI
        acc += _circular_cost(ang_x, ang_y, p)
    return float((acc / n_proj) ** (1.0 / p))


def _ssw_resampled(X, Y, n_proj, p, seed, n_resamples=20) -> float:
    """SSW between clouds of unequal size: subsample the larger side to
    the smaller and average over seeded resamples, each with its own
    projection set."""
    X, Y = as_embedding(X), as_embedding(Y)
    if X.n == Y.n:
        return spherical_sliced_wasserstein(X, Y, n_proj, p, seed)
    target = min(X.n, Y.n)
    values = []
    for r in range(n_resamples):
        rng = make_rng(seed, 100 + r)
        xs = X.values[rng.choice(X.n, target, replace=False)] if X.n > target else X.values
        ys = Y.values[rng.choice(Y.n, target, replace=False)] if Y.n > target else Y.values
        values.append(spherical_sliced_wasserstein(xs, ys, n_proj, p, derive_seed(seed, 200 + r)))
    return float(np.mean(values))


def total_ssw(
    pool: UnpairedPool,
    paired: PairedDataset,
    n_proj: int = 500,
    p: float = 2.0,
    seed: int = 0,
) -> ShiftReport:
    """Distribution shift between a pool and the paired data:
    SSW(X, A) + SSW(Y, B).

    Rows are L2-normalized onto the sphere first (the metric is
    directional). Unequal sizes are handled by seeded subsampling of
    the larger side, averaged over 20 resamples. The two sides use
    independent projection streams derived from the seed.
    """
    x = l2_normalize_rows(pool.X)
    a = l2_normalize_rows(paired.A)
    y = l2_normalize_rows(pool.Y)
    b = l2_normalize_rows(paired.B)
    ssw_x = _ssw_resampled(x, a, n_proj, p, seed)
    ssw_y = _ssw_resampled(y, b, n_proj, p, derive_seed(seed, 1))
    return ShiftReport(ssw_x, ssw_y, ssw_x + ssw_y, n_proj, p, seed)


def mutual_knn(X, Y, k: int = 10) -> float:
    """Mean overlap of the k-nearest-neighbor sets of two aligned spaces.

    For each row i, neighbors are computed within X and within Y by
    cosine similarity (self excluded); the score is the mean of
    |intersection| / k, in [0, 1].
    """
    X, Y = as_embedding(X), as_embedding(Y)
    if X.n != Y.n:
        raise ParameterError(f"mutual_knn: row counts differ, {X.n} vs {Y.n}")
    if not 1 <= k < X.n:
        raise ParameterError(f"mutual_knn: need 1 <= k < n = {X.n}, got k = {k}")
    nx = _knn_sets(X, k)
    ny = _knn_sets(Y, k)
    overlap = [len(sx & sy) for sx, sy in zip(nx, ny)]
    return float(np.mean(overlap) / k)


def _knn_sets(E, k: int) -> list[set[int]]:
    sims = cosine_affinity(E, E).values.copy()
    np.fill_diagonal(sims, -np.inf)
    top = np.argpartition(-sims, k - 1, axis=1)[:, :k]
    return [set(map(int, row)) for row in top]


def write_shift_csv(report: ShiftReport, path, dataset_x: str = "", dataset_y: str = "") -> None:
    """One CSV row per report: dataset tags, per-side SSW, total, settings."""
    header = "dataset_x,dataset_y,ssw_x,ssw_y,total,n_proj,p,seed"
    row = (
        f"{dataset_x},{dataset_y},{report.ssw_x!r},{report.ssw_y!r},"
        f"{report.total!r},{report.n_projections},{report.p!r},{report.seed}"
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n" + row + "\n")
