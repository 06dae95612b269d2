"""Linear alignment teachers fit from paired data.

Stage one of the pipeline: from a small paired set (A, B), fit a pair
of linear maps (w_x, w_y) into a shared space whose cosine affinities
act as the target geometry when training on unpaired batches. Three
fits are provided:

* `fit_procrustes`: rows of w_x / w_y are the top left/right singular
  vectors of A^T B after centering and row normalization; both maps
  have orthonormal rows.
* `fit_cca`: whitened cross-covariance SVD with a ridge added to every
  covariance eigenvalue before the inverse square root; the projected
  training data is whitened.
* `fit_linear_contrastive`: the same maps trained by sign-momentum
  descent on the pairwise sigmoid loss (or the classical contrastive
  cross-entropy) against the identity target.

The preprocessing each fit applied (stored means, row normalization)
is replayed by `teacher_affinity`, so unpaired batches are mapped
consistently with the data the teacher was fit on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container
from .divergences import SigLIPParams, siglip_loss
from .embeddings import (
    AffinityMatrix,
    PairedDataset,
    as_embedding,
    center_rows,
    cosine_affinity,
    l2_normalize_rows,
)
from .errors import DivergenceError, ParameterError, SingularityError
from .rng import make_rng
from .trainer import affinity_backward, cosine_lr, lion_step

TEACHER_KINDS = ("procrustes", "cca", "contrastive")


@dataclass(frozen=True)
class LinearTeacher:
    """Pair of linear maps (d' x d_x, d' x d_y) into a shared space."""

    kind: str
    w_x: np.ndarray
    w_y: np.ndarray
    d_prime: int
    mean_x: np.ndarray
    mean_y: np.ndarray
    normalize_rows: bool
    singular_values: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.kind not in TEACHER_KINDS:
            raise ParameterError(f"unknown teacher kind {self.kind!r}")

    def transform_x(self, X) -> np.ndarray:
        """Apply the stored preprocessing and w_x to a batch of left-side rows."""
        return self._transform(X, self.mean_x, self.w_x, "x")

    def transform_y(self, Y) -> np.ndarray:
        return self._transform(Y, self.mean_y, self.w_y, "y")

    def _transform(self, E, mean, w, side) -> np.ndarray:
        values = as_embedding(E).values.astype(np.float64, copy=False)
        if values.shape[1] != w.shape[1]:
            raise ParameterError(
                f"teacher side {side} expects dimension {w.shape[1]}, got {values.shape[1]}"
            )
        values = values - mean
        if self.normalize_rows:
            values = l2_normalize_rows(values).values
        return values @ w.T

    def affinity(self, X, Y) -> AffinityMatrix:
        return cosine_affinity(self.transform_x(X), self.transform_y(Y))


def teacher_affinity(teacher: LinearTeacher, X, Y) -> AffinityMatrix:
    """Target affinity matrix: cosine similarities of the projected batches.

    Applies the same centering/normalization the teacher saw during
    fitting before projecting.
    """
    return teacher.affinity(X, Y)


def _fix_svd_signs(U: np.ndarray, Vt: np.ndarray) -> None:
    # Make each singular pair reproducible: largest-magnitude entry of the
    # left vector is positive; the right vector flips along with it.
    for k in range(min(U.shape[1], Vt.shape[0])):
        j = int(np.argmax(np.abs(U[:, k])))
        if U[j, k] < 0:
            U[:, k] *= -1.0
            Vt[k, :] *= -1.0


def _resolve_d_prime(d_prime, d_x: int, d_y: int) -> int:
    d_max = min(d_x, d_y)
    if d_prime is None:
        return d_max
    if not 1 <= d_prime <= d_max:
        raise ParameterError(f"d_prime must be in [1, {d_max}], got {d_prime}")
    return int(d_prime)


def fit_procrustes(
    paired: PairedDataset,
    d_prime: int | None = None,
    normalize_rows: bool = True,
) -> LinearTeacher:
    """Closed-form orthogonal alignment of the paired sides.

    Centers both sides, row-normalizes (unless disabled for data that
    is already on the sphere), and takes the top-d' singular vectors of
    A^T B. If A^T B has rank below d', a warning is emitted and the
    trailing directions are an arbitrary orthonormal completion.
    """
    if paired.n < 2:
        raise ParameterError(f"fit_procrustes needs at least 2 pairs, got {paired.n}")
    d_prime = _resolve_d_prime(d_prime, paired.A.d, paired.B.d)
    A, mean_x = center_rows(paired.A)
    B, mean_y = center_rows(paired.B)
    if normalize_rows:
        A = l2_normalize_rows(A)
        B = l2_normalize_rows(B)
    U, s, Vt = np.linalg.svd(A.values.T @ B.values, full_matrices=False)
    _fix_svd_signs(U, Vt)
    rank_tol = s[0] * max(paired.A.d, paired.B.d) * np.finfo(np.float64).eps if s[0] > 0 else 0.0
    if s[d_prime - 1] <= rank_tol:
        warnings.warn(
            f"cross-product rank {int((s > rank_tol).sum())} is below d'={d_prime}; "
            "trailing directions are arbitrary",
            RuntimeWarning,
            stacklevel=2,
        )
    return LinearTeacher(
        kind="procrustes",
        w_x=U[:, :d_prime].T.copy(),
        w_y=Vt[:d_prime].copy(),
        d_prime=d_prime,
        mean_x=mean_x,
        mean_y=mean_y,
        normalize_rows=normalize_rows,
        singular_values=s[:d_prime].copy(),
    )


def _inv_sqrt_psd(S: np.ndarray, lam: float) -> np.ndarray:
    w, E = np.linalg.eigh(S)
    w = w + lam
    if w.min() < 1e-12:
        raise SingularityError(
            f"covariance eigenvalue {w.min():.3e} after ridge {lam}; increase the ridge"
        )
    return (E / np.sqrt(w)) @ E.T


def fit_cca(
    paired: PairedDataset,
    d_prime: int | None = None,
    lam: float = 0.1,
) -> LinearTeacher:
    """Closed-form CCA: SVD of the whitened cross-covariance.

    Covariances are formed from the centered sides; `lam` is added to
    every covariance eigenvalue before the inverse square root, which
    keeps zero-variance directions finite. With lam=0 the projected
    training data is whitened: (A w_x^T)^T (A w_x^T) = I.
    """
    if paired.n < 2:
        raise ParameterError(f"fit_cca needs at least 2 pairs, got {paired.n}")
    if lam < 0:
        raise ParameterError(f"fit_cca: lam must be >= 0, got {lam}")
    d_prime = _resolve_d_prime(d_prime, paired.A.d, paired.B.d)
    A, mean_x = center_rows(paired.A)
    B, mean_y = center_rows(paired.B)
    Av, Bv = A.values, B.values
    inv_sqrt_x = _inv_sqrt_psd(Av.T @ Av, lam)
    inv_sqrt_y = _inv_sqrt_psd(Bv.T @ Bv, lam)
    U, s, Vt = np.linalg.svd(inv_sqrt_x @ (Av.T @ Bv) @ inv_sqrt_y, full_matrices=False)
    _fix_svd_signs(U, Vt)
    return LinearTeacher(
        kind="cca",
        w_x=U[:, :d_prime].T @ inv_sqrt_x,
        w_y=Vt[:d_prime] @ inv_sqrt_y,
        d_prime=d_prime,
        mean_x=mean_x,
        mean_y=mean_y,
        normalize_rows=False,
        singular_values=s[:d_prime].copy(),
    )


@dataclass(frozen=True)
class ContrastiveConfig:
    """Training hyperparameters for the contrastive teacher."""

    n_steps: int = 500
    lr_max: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.99
    seed: int = 0
    loss: str = "siglip"  # or "infonce"
    scale_init: float = 20.0
    bias_init: float = -10.0

    def __post_init__(self):
        if self.loss not in ("siglip", "infonce"):
            raise ParameterError(f"unknown contrastive loss {self.loss!r}")
        if self.n_steps < 1:
            raise ParameterError("contrastive teacher needs n_steps >= 1")


def _infonce_identity(K: np.ndarray) -> tuple[float, np.ndarray]:
    # classical contrastive cross-entropy at unit temperature, diagonal target
    n = K.shape[0]
    m = K.max(axis=1, keepdims=True)
    S = np.exp(K - m)
    S /= S.sum(axis=1, keepdims=True)
    lse = np.log(np.exp(K - m).sum(axis=1)) + m[:, 0]
    value = float(np.mean(lse - np.diag(K)))
    return value, (S - np.eye(n)) / n


def fit_linear_contrastive(
    paired: PairedDataset,
    d_shared: int = 1024,
    cfg: ContrastiveConfig | None = None,
) -> LinearTeacher:
    """Train linear maps on the paired set with a contrastive objective.

    Full-batch sign-momentum descent under a cosine learning-rate
    schedule; the sigmoid loss learns its logit scale and bias along
    the way. Deterministic given cfg.seed.
    """
    if paired.n < 2:
        raise ParameterError(f"fit_linear_contrastive needs at least 2 pairs, got {paired.n}")
    cfg = cfg or ContrastiveConfig()
    A = paired.A.values.astype(np.float64, copy=False)
    B = paired.B.values.astype(np.float64, copy=False)
    rng = make_rng(cfg.seed)
    w_x = rng.standard_normal((d_shared, A.shape[1])) / np.sqrt(A.shape[1])
    w_y = rng.standard_normal((d_shared, B.shape[1])) / np.sqrt(B.shape[1])
    scale, bias = cfg.scale_init, cfg.bias_init
    m_wx = np.zeros_like(w_x)
    m_wy = np.zeros_like(w_y)
    m_scale = 0.0
    m_bias = 0.0
    for step in range(cfg.n_steps):
        Zx = A @ w_x.T
        Zy = B @ w_y.T
        K = cosine_affinity(Zx, Zy)
        if cfg.loss == "siglip":
            value, g_k, g_scale, g_bias = siglip_loss(K, SigLIPParams(scale, bias))
        else:
            value, g_k = _infonce_identity(K.values)
            g_scale = g_bias = 0.0
        g_zx, g_zy = affinity_backward(g_k, Zx, Zy)
        g_wx = g_zx.T @ A
        g_wy = g_zy.T @ B
        if not (np.isfinite(value) and np.all(np.isfinite(g_wx)) and np.all(np.isfinite(g_wy))):
            raise DivergenceError(step, "contrastive teacher produced a non-finite loss/gradient")
        lr = cosine_lr(step, cfg.n_steps, cfg.lr_max)
        w_x, m_wx = lion_step(w_x, g_wx, m_wx, lr, cfg.beta1, cfg.beta2, cfg.weight_decay)
        w_y, m_wy = lion_step(w_y, g_wy, m_wy, lr, cfg.beta1, cfg.beta2, cfg.weight_decay)
        if cfg.loss == "siglip":
            scale, m_scale = lion_step(scale, g_scale, m_scale, lr, cfg.beta1, cfg.beta2, 0.0)
            bias, m_bias = lion_step(bias, g_bias, m_bias, lr, cfg.beta1, cfg.beta2, 0.0)
    return LinearTeacher(
        kind="contrastive",
        w_x=w_x,
        w_y=w_y,
        d_prime=d_shared,
        mean_x=np.zeros(A.shape[1]),
        mean_y=np.zeros(B.shape[1]),
        normalize_rows=False,
    )


def fit_teacher(kind: str, paired: PairedDataset, **kwargs) -> LinearTeacher:
    """Dispatch to the fit for `kind`, forwarding keyword arguments."""
    if kind == "procrustes":
        return fit_procrustes(paired, **kwargs)
    if kind == "cca":
        return fit_cca(paired, **kwargs)
    if kind == "contrastive":
        return fit_linear_contrastive(paired, **kwargs)
    raise ParameterError(f"unknown teacher kind {kind!r}")


def save_teacher(teacher: LinearTeacher, path) -> None:
    """Serialize a teacher to the binary container; round-trip is bit-exact."""
    matrices = {
        "w_x": teacher.w_x,
        "w_y": teacher.w_y,
        "mean_x": teacher.mean_x,
        "mean_y": teacher.mean_y,
    }
    if teacher.singular_values is not None:
        matrices["singular_values"] = teacher.singular_values
    meta = {
        "kind": teacher.kind,
        "d_prime": teacher.d_prime,
        "normalize_rows": teacher.normalize_rows,
    }
    write_container(path, matrices, meta)


def load_teacher(path) -> LinearTeacher:
    matrices, meta = read_container(path)
    sv = matrices.get("singular_values")
    return LinearTeacher(
        kind=meta["kind"],
        w_x=matrices["w_x"],
        w_y=matrices["w_y"],
        d_prime=int(meta["d_prime"]),
        mean_x=matrices["mean_x"].ravel(),
        mean_y=matrices["mean_y"].ravel(),
        normalize_rows=bool(meta["normalize_rows"]),
        singular_values=None if sv is None else sv.ravel(),
    )
