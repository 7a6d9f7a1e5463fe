"""Dense symmetric linear algebra and seeded Gaussian sampling.

Matrices are plain ``numpy`` arrays. Symmetric positive definite (SPD)
systems are factored with LAPACK Cholesky and checked against a
scale-invariant pivot tolerance: a pivot ``l_ii**2`` must exceed
``PIVOT_RTOL * max(diag(m))``.

Random streams come from ``numpy.random.Generator`` driven by the
Philox4x64 counter-based bit generator; normals use numpy's ziggurat
transform. A stream is fully determined by its 64-bit seed.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefinite

PIVOT_RTOL = 1e-12
RIDGE_RTOL = 1e-8
SEED_MASK = (1 << 64) - 1


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return ``(m + m.T) / 2`` so that entries are exactly symmetric."""
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def ar1_cov(p: int, rho: float) -> np.ndarray:
    """Covariance with entries ``rho ** |i - j|``."""
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def equicorr_cov(p: int, rho: float) -> np.ndarray:
    """Unit diagonal, constant off-diagonal ``rho``."""
    m = np.full((p, p), float(rho))
    np.fill_diagonal(m, 1.0)
    return m


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower-triangular ``L`` with ``m = L @ L.T``.

    Raises
    ------
    NotPositiveDefinite
        If ``m`` is not square or any pivot is at or below
        ``PIVOT_RTOL * max(diag(m))``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotPositiveDefinite(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] == 0:
        return m.copy()
    scale = float(np.max(np.diag(m)))
    if not np.isfinite(scale) or scale <= 0.0:
        raise NotPositiveDefinite("matrix has no positive diagonal entry")
    try:
        L = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = np.diag(L) ** 2
    if not np.all(pivots > PIVOT_RTOL * scale):
        k = int(np.argmin(pivots))
        raise NotPositiveDefinite(f"pivot {k} is {pivots[k]:.3e}, below tolerance")
    return L


def ridge_epsilon(m: np.ndarray) -> float:
    p = m.shape[0]
    return RIDGE_RTOL * max(float(np.trace(m)) / p, np.finfo(float).tiny)


def spd_factor(m: np.ndarray, ridge: bool = False) -> np.ndarray:
    """Cholesky factor, retrying once on ``m + eps*I`` when ``ridge`` is set.

    ``eps = RIDGE_RTOL * trace(m) / p``.
    """
    try:
        return cholesky(m)
    except NotPositiveDefinite:
        if not ridge:
            raise
    m = np.asarray(m, dtype=float)
    return cholesky(m + ridge_epsilon(m) * np.eye(m.shape[0]))


def cho_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return scipy.linalg.cho_solve((L, True), b, check_finite=False)


def spd_solve(m: np.ndarray, b: np.ndarray, ridge: bool = False) -> np.ndarray:
    """Solve ``m @ x = b`` for SPD ``m``."""
    L = spd_factor(m, ridge=ridge)
    return cho_solve(L, np.asarray(b, dtype=float))


def quad_form(m: np.ndarray, v: np.ndarray, ridge: bool = False) -> float:
    """``v.T @ inv(m) @ v`` computed through the Cholesky factor."""
    v = np.asarray(v, dtype=float)
    L = spd_factor(m, ridge=ridge)
    y = scipy.linalg.solve_triangular(L, v, lower=True, check_finite=False)
    return float(y @ y)


def make_rng(seed: int) -> np.random.Generator:
    """Philox-backed generator for a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & SEED_MASK))


def sample_mvn(mean: np.ndarray, cov: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` rows from ``N(mean, cov)``; a pure function of its arguments."""
    mean = np.asarray(mean, dtype=float)
    L = cholesky(cov)
    if L.shape[0] != mean.shape[0]:
        raise ValueError("mean and cov dimensions differ")
    z = make_rng(seed).standard_normal((int(n), mean.shape[0]))
    return mean + z @ L.T
