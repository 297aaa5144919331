"""Dense linear algebra for the network parameters and rank diagnostics.

Matrices are plain ``float64`` numpy arrays. ``as_mat`` / ``as_colvec`` are the
validation gate for anything coming from outside the library.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from ._backend import kernels

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def as_mat(a, name: str = "matrix") -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def as_colvec(a, name: str = "vector") -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim == 2 and 1 in arr.shape:
        arr = arr.reshape(-1)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def frobenius_norm(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    return math.sqrt(float(np.sum(a * a)))


class PowerIteration(NamedTuple):
    value: float
    converged: bool
    iterations: int


def spectral_norm(a: np.ndarray, tol: float = 1e-13, max_iters: int = 100_000) -> PowerIteration:
    """Largest singular value by power iteration on ``AᵀA``.

    Starts from the normalised all-ones vector. If that start is (numerically)
    orthogonal to the dominant right singular vector the first coordinate is
    nudged by 1e-8. Iteration stops once the estimate changes by less than
    ``tol`` relative; ``converged`` is False when ``max_iters`` ran out.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = np.asarray(a, dtype=np.float64)
    fro2 = float(np.sum(a * a))
    if fro2 == 0.0:
        return PowerIteration(0.0, True, 0)
    v = np.ones(a.shape[1]) / math.sqrt(a.shape[1])
    w = a.T @ (a @ v)
    if float(np.linalg.norm(w)) <= 1e-12 * fro2:
        v[0] += 1e-8
        v /= np.linalg.norm(v)
        w = a.T @ (a @ v)
    sigma = 0.0
    for it in range(1, max_iters + 1):
        # Rayleigh quotient vᵀAᵀAv = ‖Av‖²
        new_sigma = math.sqrt(max(float(v @ w), 0.0))
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return PowerIteration(new_sigma, True, it)
        if abs(new_sigma - sigma) <= tol * new_sigma:
            return PowerIteration(new_sigma, True, it)
        sigma = new_sigma
        v = w / nw
        w = a.T @ (a @ v)
    return PowerIteration(sigma, False, max_iters)


def singular_values(a: np.ndarray, tol: float = JACOBI_TOL) -> np.ndarray:
    """All ``min(rows, cols)`` singular values in descending order.

    One-sided (Hestenes) Jacobi: column pairs are rotated until every pair is
    orthogonal to ``tol`` relative, then the column norms are the singular
    values. Columns whose norm falls below ``tol * ||a||_F`` are treated as
    converged. Wide matrices are handled through their transpose.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("expected a 2-D array")
    # rows of w are the columns being orthogonalised; need rows(w) <= cols(w)
    w = np.array(a.T if a.shape[0] >= a.shape[1] else a, dtype=np.float64, order="C")
    sweeps, converged = kernels.jacobi_sweeps(w, tol, JACOBI_MAX_SWEEPS)
    if not converged:
        raise RuntimeError(f"Jacobi SVD did not converge in {sweeps} sweeps")
    sv = np.sqrt(np.einsum("ij,ij->i", w, w))
    return np.sort(sv)[::-1]


def numerical_rank(a: np.ndarray, rel_tol: float = 1e-9) -> int:
    sv = singular_values(a)
    if sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > rel_tol * sv[0]))


def stable_rank(a: np.ndarray) -> float:
    """``‖A‖_F² / ‖A‖_2²``; lies in ``[1, min(rows, cols)]`` up to rounding."""
    a = np.asarray(a, dtype=np.float64)
    top = singular_values(a)[0]
    if top == 0.0:
        raise ValueError("stable rank is undefined for the zero matrix")
    return float(np.sum(a * a)) / (top * top)


def gaussian_matrix(rows: int, cols: int, mean: float = 0.0, variance: float = 1.0,
                    seed: int | None = 0) -> np.ndarray:
    if variance < 0:
        raise ValueError("variance must be non-negative")
    rng = np.random.default_rng(seed)
    return rng.normal(mean, math.sqrt(variance), size=(rows, cols))
