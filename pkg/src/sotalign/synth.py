"""Synthetic two-modality data with a shared latent structure.

Both sides observe the same Gaussian latent variable through fixed
random full-rank linear maps plus isotropic noise, so independently
generated "image" and "text" embeddings carry compatible geometry by
construction. An optional latent mean shift moves the unpaired pool
away from the paired distribution, which is how controlled
distribution-shift levels are produced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import ParameterError
from .rng import make_rng


@dataclass(frozen=True)
class SynthConfig:
    latent_dim: int = 16
    d_x: int = 48
    d_y: int = 32
    n_pairs: int = 200
    n_unpaired: int = 5000
    n_heldout: int = 500
    noise_std: float = 0.3
    shift: float = 0.0
    identity_maps: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.latent_dim, self.d_x, self.d_y, self.n_pairs) < 1:
            raise ParameterError("latent_dim, d_x, d_y and n_pairs must all be >= 1")
        if self.identity_maps and not (self.latent_dim == self.d_x == self.d_y):
            raise ParameterError("identity maps need latent_dim == d_x == d_y")


@dataclass(frozen=True)
class SynthData:
    paired_x: EmbeddingMatrix
    paired_y: EmbeddingMatrix
    unpaired_x: EmbeddingMatrix
    unpaired_y: EmbeddingMatrix
    heldout_x: EmbeddingMatrix
    heldout_y: EmbeddingMatrix


def generate_platonic(cfg: SynthConfig) -> SynthData:
    """Draw paired, unpaired and held-out splits from the latent model.

    Paired and held-out rows share a latent per row across the two
    sides; unpaired pools use fresh independent latents (optionally
    mean-shifted by cfg.shift along a fixed random direction, on both
    sides). Deterministic given cfg.seed.
    """
    rng_maps = make_rng(cfg.seed, 0)
    if cfg.identity_maps:
        p_x = np.eye(cfg.latent_dim)
        p_y = np.eye(cfg.latent_dim)
    else:
        p_x = rng_maps.standard_normal((cfg.latent_dim, cfg.d_x)) / np.sqrt(cfg.latent_dim)
        p_y = rng_maps.standard_normal((cfg.latent_dim, cfg.d_y)) / np.sqrt(cfg.latent_dim)
    shift_dir = rng_maps.standard_normal(cfg.latent_dim)
    shift_dir /= np.linalg.norm(shift_dir)

    def observe(z: np.ndarray, proj: np.ndarray, rng) -> EmbeddingMatrix:
        noise = cfg.noise_std * rng.standard_normal((z.shape[0], proj.shape[1]))
        return EmbeddingMatrix((z @ proj + noise).astype(np.float32))

    rng_pair = make_rng(cfg.seed, 1)
    z_pair = rng_pair.standard_normal((cfg.n_pairs, cfg.latent_dim))
    paired_x = observe(z_pair, p_x, rng_pair)
    paired_y = observe(z_pair, p_y, rng_pair)

    rng_held = make_rng(cfg.seed, 2)
    z_held = rng_held.standard_normal((max(cfg.n_heldout, 1), cfg.latent_dim))
    heldout_x = observe(z_held, p_x, rng_held)
    heldout_y = observe(z_held, p_y, rng_held)

    rng_pool = make_rng(cfg.seed, 3)
    offset = cfg.shift * shift_dir
    z_x = rng_pool.standard_normal((max(cfg.n_unpaired, 1), cfg.latent_dim)) + offset
    unpaired_x = observe(z_x, p_x, rng_pool)
    z_y = rng_pool.standard_normal((max(cfg.n_unpaired, 1), cfg.latent_dim)) + offset
    unpaired_y = observe(z_y, p_y, rng_pool)

    return SynthData(paired_x, paired_y, unpaired_x, unpaired_y, heldout_x, heldout_y)
