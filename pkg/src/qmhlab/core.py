"""Finite state spaces, thermal distributions and stochastic kernels.

Distributions are 1-d float arrays and kernels are row-stochastic 2-d
arrays with ``K[a, b] = K(b|a)``.  Everything downstream consumes these
plain arrays; the helpers here only validate and compute.
"""
from __future__ import annotations

import numpy as np

from .errors import ValidationError

SUM_TOL = 1e-12
DENSE_LIMIT = 4096


def as_energies(energies) -> np.ndarray:
    """Return ``energies`` as a finite float vector."""
    e = np.asarray(energies, dtype=float)
    if e.ndim != 1 or e.size == 0:
        raise ValidationError("energy table must be a non-empty vector")
    if not np.all(np.isfinite(e)):
        raise ValidationError("energy table contains NaN or inf")
    return e


def as_beta(beta) -> float:
    beta = float(beta)
    if not np.isfinite(beta) or beta < 0:
        raise ValidationError(f"inverse temperature must be finite and >= 0, got {beta}")
    return beta


def as_distribution(probs, tol: float = SUM_TOL) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError("distribution must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValidationError("distribution has negative or non-finite entries")
    if abs(p.sum() - 1.0) > tol:
        raise ValidationError(f"distribution sums to {p.sum()!r}, not 1")
    return p


def as_kernel(rows, tol: float = SUM_TOL) -> np.ndarray:
    """Validate a row-stochastic matrix ``K[a, b] = K(b|a)``."""
    k = np.asarray(rows, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] == 0:
        raise ValidationError(f"kernel must be a non-empty square matrix, got shape {k.shape}")
    if np.any(k < 0) or not np.all(np.isfinite(k)):
        raise ValidationError("kernel has negative or non-finite entries")
    bad = np.abs(k.sum(axis=1) - 1.0) > tol
    if np.any(bad):
        raise ValidationError(f"kernel rows {np.flatnonzero(bad).tolist()} do not sum to 1")
    return k


def thermal_distribution(energies, beta) -> np.ndarray:
    """Boltzmann distribution ``exp(-beta E) / Z``.

    The minimum energy is subtracted before exponentiating so the largest
    weight is exactly one and nothing overflows at large ``beta``.
    """
    e = as_energies(energies)
    beta = as_beta(beta)
    w = np.exp(-beta * (e - e.min()))
    return w / w.sum()


def tv_distance(d1, d2) -> float:
    """Total variation distance ``sum |d1 - d2| / 2``."""
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    if d1.shape != d2.shape:
        raise ValidationError(f"length mismatch: {d1.shape} vs {d2.shape}")
    return 0.5 * float(np.abs(d1 - d2).sum())


def retention_rate(kernel) -> float:
    """Maximum retention rate of a kernel.

    The L1 contraction ratio over zero-sum vectors is maximised at
    two-point differences, so this is the Dobrushin coefficient
    ``max_{a,b} TV(K(.|a), K(.|b))``.
    """
    k = as_kernel(kernel)
    # pairwise L1 distances between rows, vectorised over the first index
    diffs = np.abs(k[:, None, :] - k[None, :, :]).sum(axis=2)
    return float(min(1.0, 0.5 * diffs.max()))


def retention_ratio(kernel, x) -> float:
    """L1 contraction ratio ``|x K|_1 / |x|_1`` for a zero-sum vector ``x``."""
    k = np.asarray(kernel, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(np.abs(x @ k).sum() / np.abs(x).sum())


def stationary_distribution(kernel) -> np.ndarray:
    """Left eigenvector of eigenvalue one, normalised to a distribution."""
    k = np.asarray(kernel, dtype=float)
    n = k.shape[0]
    # solve p (K - I) = 0 with sum(p) = 1 as a least-squares system
    a = np.vstack([(k - np.eye(n)).T, np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    p, *_ = np.linalg.lstsq(a, b, rcond=None)
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def sample(probs, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of one state index from ``probs``."""
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    # guard against u landing on the last cumulative value through rounding
    return min(idx, len(cdf) - 1)


def check_dense(size: int) -> None:
    if size > DENSE_LIMIT:
        raise ValidationError(f"dense enumeration capped at {DENSE_LIMIT} states, got {size}")


def random_kernel(size: int, rng: np.random.Generator, sparsity: float = 0.0) -> np.ndarray:
    """Random row-stochastic matrix, optionally with zeroed off-diagonal entries.

    Zeroed entries are mirrored so that ``K(b|a) > 0`` iff ``K(a|b) > 0``;
    the acceptance ratio is then defined wherever a proposal can occur.
    """
    k = rng.random((size, size)) + 0.05
    if sparsity > 0:
        mask = rng.random((size, size)) < sparsity
        mask = mask | mask.T
        np.fill_diagonal(mask, False)
        k[mask] = 0.0
    return k / k.sum(axis=1, keepdims=True)
