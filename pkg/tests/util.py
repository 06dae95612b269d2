"""Shared test helpers: gradient-error metric and brute-force oracles."""

from __future__ import annotations

import itertools

import numpy as np


def grad_rel_err(analytic: np.ndarray, reference: np.ndarray) -> float:
    """Entrywise deviation normalized by the reference gradient's scale.

    Strict per-entry relative error is undefined where the gradient
    crosses zero, so deviations are measured against the largest
    reference magnitude.
    """
    scale = max(float(np.abs(reference).max()), 1e-300)
    return float(np.abs(analytic - reference).max() / scale)


def random_bistochastic(n: int, rng: np.random.Generator, n_perms: int = 6) -> np.ndarray:
    """Exactly bistochastic matrix: a convex mixture of random permutations."""
    weights = rng.dirichlet(np.ones(n_perms))
    out = np.zeros((n, n))
    for w in weights:
        out[np.arange(n), rng.permutation(n)] += w
    return out


def best_assignment(K: np.ndarray) -> tuple[tuple[int, ...], float]:
    """Exhaustive search for the permutation maximizing sum_i K[i, pi(i)]."""
    n = K.shape[0]
    best_pi, best_val = None, -np.inf
    for pi in itertools.permutations(range(n)):
        val = sum(K[i, pi[i]] for i in range(n))
        if val > best_val:
            best_pi, best_val = pi, val
    return best_pi, best_val
