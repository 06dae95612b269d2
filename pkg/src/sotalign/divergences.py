"""Divergences between affinity matrices, with values and gradients.

Three divergences compare the learned-space affinity matrix K against a
constant target K*: centered kernel alignment (used as the loss
1 - CKA), a generalized InfoNCE that compares row-wise softmaxes of the
two matrices at separate temperatures, and the entropic-OT KL
divergence from `entropic_ot`. All gradients are with respect to K
only; the target branch never receives gradient. The supervised
sigmoid pairwise loss (learned logit scale and bias, identity target)
also lives here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

from .embeddings import as_embedding, as_matrix
from .entropic_ot import klot_value_and_grad
from .errors import ParameterError, UndefinedCKAError

DIVERGENCE_KINDS = ("cka", "infonce", "klot")


@dataclass(frozen=True)
class DivergenceSpec:
    """Which divergence to use and at which temperatures.

    `epsilon` is the learned-space temperature, `epsilon_star` the
    target-space temperature; CKA ignores both.
    """

    kind: str
    epsilon: float = 0.05
    epsilon_star: float = 0.01

    def __post_init__(self):
        if self.kind not in DIVERGENCE_KINDS:
            raise ParameterError(f"unknown divergence kind {self.kind!r}")
        if self.kind != "cka" and (self.epsilon <= 0 or self.epsilon_star <= 0):
            raise ParameterError("divergence temperatures must be > 0")


@dataclass(frozen=True)
class SigLIPParams:
    """Learned logit scale and bias of the sigmoid pairwise loss."""

    scale: float = 20.0
    bias: float = -10.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ParameterError(f"logit scale must be > 0, got {self.scale}")


def _centered_kernel(K: np.ndarray) -> np.ndarray:
    # H K H with H = I - (1/n) 1 1^T, without forming H
    row = K.mean(axis=1, keepdims=True)
    col = K.mean(axis=0, keepdims=True)
    return K - row - col + K.mean()


def cka_from_kernels(K1, K2) -> float:
    """CKA between two kernel matrices via explicit double centering.

    Equals the cosine similarity of the vectorized centered kernels.
    """
    K1, K2 = as_matrix(K1), as_matrix(K2)
    if K1.shape != K2.shape or K1.shape[0] != K1.shape[1]:
        raise ParameterError(f"cka_from_kernels: incompatible shapes {K1.shape}, {K2.shape}")
    Kb1, Kb2 = _centered_kernel(K1), _centered_kernel(K2)
    d1 = np.linalg.norm(Kb1)
    d2 = np.linalg.norm(Kb2)
    if d1 < 1e-300 or d2 < 1e-300:
        raise UndefinedCKAError("centered kernel has zero norm; CKA is undefined")
    return float(np.sum(Kb1 * Kb2) / (d1 * d2))


def cka_div(X1, X2) -> float:
    """CKA between the linear kernels of two representations.

    Factorized form: centers the features and works with the d x d
    cross- and self-products, never materializing an n x n kernel, so
    memory is O(n d + d^2). Agrees with `cka_from_kernels` on
    X X^T kernels to 1e-10.
    """
    X1, X2 = as_embedding(X1), as_embedding(X2)
    if X1.n != X2.n:
        raise ParameterError(f"cka_div: row counts differ, {X1.n} vs {X2.n}")
    Xb1 = X1.values - X1.values.mean(axis=0)
    Xb2 = X2.values - X2.values.mean(axis=0)
    num = np.linalg.norm(Xb1.T @ Xb2) ** 2
    d1 = np.linalg.norm(Xb1.T @ Xb1)
    d2 = np.linalg.norm(Xb2.T @ Xb2)
    if d1 < 1e-300 or d2 < 1e-300:
        raise UndefinedCKAError("all-constant input; centered representation has zero norm")
    return float(num / (d1 * d2))


def _cka_loss_and_grad(K: np.ndarray, K_star: np.ndarray) -> tuple[float, np.ndarray]:
    Kb = _centered_kernel(K)
    Kb_star = _centered_kernel(K_star)
    d1 = np.linalg.norm(Kb)
    d2 = np.linalg.norm(Kb_star)
    if d1 < 1e-300 or d2 < 1e-300:
        raise UndefinedCKAError("centered kernel has zero norm; CKA is undefined")
    num = float(np.sum(Kb * Kb_star))
    value = 1.0 - num / (d1 * d2)
    # d<Kb,Kb*>/dK = H Kb* H = Kb* (already double-centered); d|Kb|/dK = Kb/|Kb|
    grad = -(Kb_star / (d1 * d2) - num * Kb / (d1**3 * d2))
    return value, grad


def generalized_infonce(
    K,
    K_star,
    epsilon: float = 1.0,
    epsilon_star: float = 1e-4,
) -> tuple[float, np.ndarray]:
    """Row-wise KL between softmaxes of K* and K, averaged over rows.

    With K* = I and epsilon_star -> 0 this recovers the classical
    contrastive cross-entropy with unit temperature. The gradient is
    (softmax(K) - softmax(K*)) / (n * epsilon), the row-wise analogue
    of the transport-plan gradient, where the 1/n matches the row
    average in the value.
    """
    K, K_star = as_matrix(K), as_matrix(K_star)
    if K.shape != K_star.shape:
        raise ParameterError(f"generalized_infonce: size mismatch {K.shape} vs {K_star.shape}")
    if epsilon <= 0 or epsilon_star <= 0:
        raise ParameterError("generalized_infonce: temperatures must be > 0")
    n = K.shape[0]
    scaled = K / epsilon
    log_s = scaled - _row_logsumexp(scaled)[:, None]
    scaled_star = K_star / epsilon_star
    log_s_star = scaled_star - _row_logsumexp(scaled_star)[:, None]
    s = np.exp(log_s)
    s_star = np.exp(log_s_star)
    value = float((xlogy(s_star, s_star).sum() - np.sum(s_star * log_s)) / n)
    grad = (s - s_star) / (n * epsilon)
    return value, grad


def _row_logsumexp(M: np.ndarray) -> np.ndarray:
    m = M.max(axis=1)
    return np.log(np.exp(M - m[:, None]).sum(axis=1)) + m


def siglip_loss(K_p, params: SigLIPParams) -> tuple[float, np.ndarray, float, float]:
    """Pairwise sigmoid loss of an affinity matrix against the identity target.

    value = (1/n) sum_ij log(1 + exp(-z_ij (t K_ij + b))) with z_ij = +1
    on the diagonal and -1 off it. Returns (value, grad_K, grad_scale,
    grad_bias); the log term is evaluated as logaddexp for stability.
    """
    K = as_matrix(K_p)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ParameterError(f"siglip_loss: K must be square, got shape {K.shape}")
    n = K.shape[0]
    z = 2.0 * np.eye(n) - 1.0
    logits = params.scale * K + params.bias
    value = float(np.logaddexp(0.0, -z * logits).sum() / n)
    dlogits = -z * expit(-z * logits) / n
    grad_k = dlogits * params.scale
    grad_scale = float(np.sum(dlogits * K))
    grad_bias = float(dlogits.sum())
    return value, grad_k, grad_scale, grad_bias


def divergence_value_and_grad(
    spec: DivergenceSpec,
    K,
    K_star,
    sinkhorn_tol: float = 1e-6,
    sinkhorn_max_iter: int = 100,
) -> tuple[float, np.ndarray]:
    """Dispatch to the configured divergence; K* is treated as constant.

    The transport-based divergence keeps its raw KL scale (the plan is
    a joint distribution of total mass n): the regularization weights
    the training loss expects are calibrated against that scale.
    """
    K, K_star = as_matrix(K), as_matrix(K_star)
    if K.shape != K_star.shape or K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ParameterError(
            f"divergence_value_and_grad: need equal square matrices, got {K.shape}, {K_star.shape}"
        )
    if spec.kind == "cka":
        return _cka_loss_and_grad(K, K_star)
    if spec.kind == "infonce":
        return generalized_infonce(K, K_star, spec.epsilon, spec.epsilon_star)
    if spec.kind == "klot":
        return klot_value_and_grad(
            K,
            K_star,
            spec.epsilon,
            spec.epsilon_star,
            tol=sinkhorn_tol,
            max_iter=sinkhorn_max_iter,
        )
    raise ParameterError(f"unknown divergence kind {spec.kind!r}")
