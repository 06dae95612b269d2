"""End-to-end training of the alignment layers.

Each step assembles the two-term loss

    total = siglip(K_p, identity) + alpha * DIV(K, K*)

where K_p is the cosine affinity of the projected paired batch, K the
affinity of the projected unpaired batch, and K* the teacher affinity
on the same unpaired batch (a constant target). Gradients flow through
the cosine affinities into the two linear layers and the sigmoid-loss
scale/bias; parameters are updated by sign-momentum (LION) steps under
a cosine learning-rate schedule.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container
from .divergences import DivergenceSpec, SigLIPParams, divergence_value_and_grad, siglip_loss
from .embeddings import (
    PairedDataset,
    UnpairedPool,
    as_embedding,
    cosine_affinity,
    row_norms,
    sample_batch,
)
from .errors import DataError, DegenerateRowError, DivergenceError, ParameterError
from .rng import derive_seed, make_rng


@dataclass(frozen=True)
class Aligner:
    """Trainable linear alignment layers plus the sigmoid-loss parameters."""

    w_f: np.ndarray  # d x d_x, image side
    w_g: np.ndarray  # d x d_y, text side
    siglip: SigLIPParams

    def __post_init__(self):
        if not (np.all(np.isfinite(self.w_f)) and np.all(np.isfinite(self.w_g))):
            raise DataError("aligner weights contain NaN or Inf entries")

    def project_x(self, X) -> np.ndarray:
        return as_embedding(X).values.astype(np.float64, copy=False) @ self.w_f.T

    def project_y(self, Y) -> np.ndarray:
        return as_embedding(Y).values.astype(np.float64, copy=False) @ self.w_g.T


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of a training run.

    Batch sizes are caps: each step uses min(cap, available) rows.
    `init` selects the layer initialization: "gaussian" (std 1/sqrt of
    the input dimension) or "teacher" (copy the teacher maps; requires
    d == teacher d').
    """

    alpha: float
    div: DivergenceSpec = field(default_factory=lambda: DivergenceSpec("klot"))
    n_steps: int = 2000
    lr_max: float = 1e-4
    weight_decay: float = 1e-5
    n_pair_batch: int = 10_000
    n_unpaired_x: int = 11_000
    n_unpaired_y: int = 11_000
    d: int = 1024
    seed: int = 0
    lion_beta1: float = 0.9
    lion_beta2: float = 0.99
    init: str = "gaussian"
    sinkhorn_tol: float = 1e-6
    sinkhorn_max_iter: int = 100

    def __post_init__(self):
        if self.alpha < 0:
            raise ParameterError(f"alpha must be >= 0, got {self.alpha}")
        if self.n_steps < 1:
            raise ParameterError(f"n_steps must be >= 1, got {self.n_steps}")
        if min(self.n_pair_batch, self.n_unpaired_x, self.n_unpaired_y) < 0:
            raise ParameterError("batch sizes must be >= 0")
        if self.init not in ("gaussian", "teacher"):
            raise ParameterError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-step loss values; total = supervised + alpha * regularizer."""

    supervised: float
    regularizer: float
    total: float


@dataclass(frozen=True)
class TrainReport:
    """Per-step losses and the final state of a run."""

    supervised: np.ndarray
    regularizer: np.ndarray
    total: np.ndarray
    lr: np.ndarray
    aligner: Aligner
    teacher: object
    seed: int
    label: str
    wall_clock_s: float


def lion_step(param, grad, momentum, lr, beta1, beta2, weight_decay):
    """One sign-momentum update; returns (new_param, new_momentum).

    update = sign(beta1 * m + (1 - beta1) * g), applied together with
    decoupled weight decay; the momentum then tracks beta2.
    """
    update = np.sign(beta1 * momentum + (1.0 - beta1) * grad)
    new_param = param - lr * (update + weight_decay * param)
    new_momentum = beta2 * momentum + (1.0 - beta2) * grad
    return new_param, new_momentum


def cosine_lr(step: int, total: int, lr_max: float) -> float:
    """Cosine annealing from lr_max at step 0 to 0 at step = total."""
    if not 0 <= step <= total:
        raise ParameterError(f"step {step} outside [0, {total}]")
    return lr_max * 0.5 * (1.0 + np.cos(np.pi * step / total))


def affinity_backward(grad_K, U, V) -> tuple[np.ndarray, np.ndarray]:
    """Chain rule through the cosine affinity K[U, V].

    Accumulates d k(u, v)/du = v / (|u||v|) - k(u, v) u / |u|^2 over
    all entries of grad_K; symmetric for V.
    """
    U = as_embedding(U)
    V = as_embedding(V)
    G = np.asarray(grad_K, dtype=np.float64)
    if G.shape != (U.n, V.n):
        raise ParameterError(f"affinity_backward: grad shape {G.shape} != ({U.n}, {V.n})")
    un = row_norms(U)
    vn = row_norms(V)
    if un.min() < 1e-12:
        raise DegenerateRowError(int(un.argmin()), "affinity_backward (left)")
    if vn.min() < 1e-12:
        raise DegenerateRowError(int(vn.argmin()), "affinity_backward (right)")
    Un = U.values.astype(np.float64, copy=False) / un[:, None]
    Vn = V.values.astype(np.float64, copy=False) / vn[:, None]
    gu_hat = G @ Vn
    grad_u = (gu_hat - (gu_hat * Un).sum(axis=1, keepdims=True) * Un) / un[:, None]
    gv_hat = G.T @ Un
    grad_v = (gv_hat - (gv_hat * Vn).sum(axis=1, keepdims=True) * Vn) / vn[:, None]
    return grad_u, grad_v


def init_optimizer_state(aligner: Aligner) -> dict:
    """Zeroed momenta for every trainable parameter."""
    return {
        "w_f": np.zeros_like(aligner.w_f),
        "w_g": np.zeros_like(aligner.w_g),
        "scale": 0.0,
        "bias": 0.0,
    }


def train_step(
    aligner: Aligner,
    batch,
    data: tuple[PairedDataset, UnpairedPool],
    teacher,
    cfg: TrainConfig,
    opt_state: dict,
    step: int,
) -> tuple[Aligner, dict, LossBreakdown]:
    """One optimization step; returns the updated aligner, optimizer state
    and the loss breakdown. With alpha = 0 the unpaired branch is skipped
    entirely, so the step depends only on the paired batch."""
    paired, pool = data
    A = paired.A.values[batch.paired_idx].astype(np.float64, copy=False)
    B = paired.B.values[batch.paired_idx].astype(np.float64, copy=False)
    z_a = A @ aligner.w_f.T
    z_b = B @ aligner.w_g.T
    k_p = cosine_affinity(z_a, z_b)
    supervised, g_kp, g_scale, g_bias = siglip_loss(k_p, aligner.siglip)
    g_za, g_zb = affinity_backward(g_kp, z_a, z_b)
    g_wf = g_za.T @ A
    g_wg = g_zb.T @ B

    regularizer = 0.0
    if cfg.alpha > 0 and batch.unpaired_x_idx.size and batch.unpaired_y_idx.size:
        if batch.unpaired_x_idx.size != batch.unpaired_y_idx.size:
            raise ParameterError("unpaired batch sides must have equal size for a square K")
        Xb = pool.X.values[batch.unpaired_x_idx].astype(np.float64, copy=False)
        Yb = pool.Y.values[batch.unpaired_y_idx].astype(np.float64, copy=False)
        k_star = teacher.affinity(Xb, Yb)
        z_x = Xb @ aligner.w_f.T
        z_y = Yb @ aligner.w_g.T
        k = cosine_affinity(z_x, z_y)
        with warnings.catch_warnings():
            # fixed-iteration solves at sharp temperatures routinely stop
            # before the marginal tolerance; that is the training protocol
            warnings.filterwarnings("ignore", message="sinkhorn did not reach")
            regularizer, g_k = divergence_value_and_grad(
                cfg.div, k, k_star, cfg.sinkhorn_tol, cfg.sinkhorn_max_iter
            )
        g_zx, g_zy = affinity_backward(cfg.alpha * g_k, z_x, z_y)
        g_wf = g_wf + g_zx.T @ Xb
        g_wg = g_wg + g_zy.T @ Yb

    total = supervised + cfg.alpha * regularizer
    finite = (
        np.isfinite(total)
        and np.all(np.isfinite(g_wf))
        and np.all(np.isfinite(g_wg))
        and np.isfinite(g_scale)
        and np.isfinite(g_bias)
    )
    if not finite:
        raise DivergenceError(step)

    lr = cosine_lr(step, cfg.n_steps, cfg.lr_max)
    b1, b2 = cfg.lion_beta1, cfg.lion_beta2
    w_f, m_wf = lion_step(aligner.w_f, g_wf, opt_state["w_f"], lr, b1, b2, cfg.weight_decay)
    w_g, m_wg = lion_step(aligner.w_g, g_wg, opt_state["w_g"], lr, b1, b2, cfg.weight_decay)
    # no weight decay on the sigmoid-loss parameters: decaying the bias
    # toward 0 would fight its -10 initialization
    scale, m_scale = lion_step(aligner.siglip.scale, g_scale, opt_state["scale"], lr, b1, b2, 0.0)
    bias, m_bias = lion_step(aligner.siglip.bias, g_bias, opt_state["bias"], lr, b1, b2, 0.0)
    new_aligner = Aligner(w_f, w_g, SigLIPParams(float(scale), float(bias)))
    new_state = {"w_f": m_wf, "w_g": m_wg, "scale": m_scale, "bias": m_bias}
    return new_aligner, new_state, LossBreakdown(supervised, regularizer, total)


def initial_aligner(cfg: TrainConfig, d_x: int, d_y: int, teacher=None) -> Aligner:
    """Build the starting aligner per cfg.init."""
    if cfg.init == "teacher":
        if teacher is None:
            raise ParameterError("init='teacher' requires a fitted teacher")
        if teacher.d_prime != cfg.d or teacher.w_x.shape[1] != d_x or teacher.w_y.shape[1] != d_y:
            raise ParameterError(
                f"teacher init needs d == d' == {teacher.d_prime} and matching input dims"
            )
        w_f = teacher.w_x.copy()
        w_g = teacher.w_y.copy()
    else:
        rng = make_rng(cfg.seed, 0)
        w_f = rng.standard_normal((cfg.d, d_x)) / np.sqrt(d_x)
        w_g = rng.standard_normal((cfg.d, d_y)) / np.sqrt(d_y)
    return Aligner(w_f, w_g, SigLIPParams())


def train_sotalign(
    paired: PairedDataset,
    pool: UnpairedPool,
    teacher_kind: str,
    cfg: TrainConfig,
    teacher=None,
    teacher_kwargs: dict | None = None,
) -> TrainReport:
    """Fit the teacher, then run cfg.n_steps alignment steps.

    A prefit `teacher` can be supplied to skip refitting. Deterministic
    given cfg.seed: batches, initialization and every update derive
    from it.
    """
    start = time.perf_counter()
    if teacher is None:
        from .linear_teachers import fit_teacher

        kwargs = dict(teacher_kwargs or {})
        if teacher_kind == "contrastive" and "cfg" not in kwargs:
            from .linear_teachers import ContrastiveConfig

            kwargs["cfg"] = ContrastiveConfig(seed=derive_seed(cfg.seed, 1))
        teacher = fit_teacher(teacher_kind, paired, **kwargs)
    aligner = initial_aligner(cfg, paired.A.d, paired.B.d, teacher)
    opt_state = init_optimizer_state(aligner)
    n_pair = min(cfg.n_pair_batch, paired.n)
    n_x = min(cfg.n_unpaired_x, pool.X.n)
    n_y = min(cfg.n_unpaired_y, pool.Y.n)
    supervised = np.empty(cfg.n_steps)
    regularizer = np.empty(cfg.n_steps)
    total = np.empty(cfg.n_steps)
    lrs = np.empty(cfg.n_steps)
    for step in range(cfg.n_steps):
        batch = sample_batch(paired, pool, n_pair, n_x, n_y, derive_seed(cfg.seed, 2, step))
        aligner, opt_state, losses = train_step(
            aligner, batch, (paired, pool), teacher, cfg, opt_state, step
        )
        supervised[step] = losses.supervised
        regularizer[step] = losses.regularizer
        total[step] = losses.total
        lrs[step] = cosine_lr(step, cfg.n_steps, cfg.lr_max)
    return TrainReport(
        supervised=supervised,
        regularizer=regularizer,
        total=total,
        lr=lrs,
        aligner=aligner,
        teacher=teacher,
        seed=cfg.seed,
        label="supervised-baseline" if cfg.alpha == 0 else "sotalign",
        wall_clock_s=time.perf_counter() - start,
    )


def write_train_report(report: TrainReport, path) -> None:
    """Per-step losses as CSV: step, lr, supervised, regularizer, total."""
    lines = ["step,lr,supervised,regularizer,total"]
    for i in range(report.total.size):
        lines.append(
            f"{i},{report.lr[i]!r},{report.supervised[i]!r},"
            f"{report.regularizer[i]!r},{report.total[i]!r}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def save_aligner(aligner: Aligner, path) -> None:
    """Serialize an aligner to the binary container; round-trip is bit-exact."""
    write_container(
        path,
        {
            "w_f": aligner.w_f,
            "w_g": aligner.w_g,
            "siglip": np.array([aligner.siglip.scale, aligner.siglip.bias]),
        },
        {"d": aligner.w_f.shape[0]},
    )


def load_aligner(path) -> Aligner:
    matrices, _ = read_container(path)
    scale, bias = matrices["siglip"].ravel()
    return Aligner(matrices["w_f"], matrices["w_g"], SigLIPParams(float(scale), float(bias)))
