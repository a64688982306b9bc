"""Small dense linear algebra shared by every other module.

Vectors are 1-D float64 numpy arrays, matrices 2-D. Covariance-style
matrices are kept symmetric by construction; ``invert_spd`` is the single
gateway between covariance and precision form.
"""

from __future__ import annotations

import math

import numpy as np

Matrix = np.ndarray
Vector = np.ndarray

SYMMETRY_TOL = 1e-9


class NdkfError(Exception):
    """Base class for every error raised by this package."""


class NotSPD(NdkfError):
    """A matrix expected to be symmetric positive definite is not."""


class NoConvergence(NdkfError):
    """An iterative routine failed to reach its tolerance."""


def as_vector(x, dim: int | None = None) -> Vector:
    """Coerce to a finite 1-D float array, optionally checking its length."""
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        v = v.reshape(-1)
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"expected vector of dim {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def as_matrix(x, shape: tuple[int, int] | None = None) -> Matrix:
    """Coerce to a finite 2-D float array, optionally checking its shape."""
    m = np.asarray(x, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={m.ndim}")
    if shape is not None and m.shape != shape:
        raise ValueError(f"expected matrix of shape {shape}, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def symmetrize(m: Matrix) -> Matrix:
    return 0.5 * (m + m.T)


def is_symmetric(m: Matrix, tol: float = SYMMETRY_TOL) -> bool:
    return m.ndim == 2 and m.shape[0] == m.shape[1] and bool(
        np.max(np.abs(m - m.T), initial=0.0) <= tol
    )


def invert_spd(m: Matrix) -> Matrix:
    """Invert a symmetric positive definite matrix via Cholesky.

    The input must be square and symmetric within ``SYMMETRY_TOL``. The
    result is symmetrized to kill round-off asymmetry. Raises ``NotSPD``
    when the factorization hits a non-positive pivot.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSPD(f"not a square matrix: shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotSPD("matrix has non-finite entries")
    if np.max(np.abs(m - m.T), initial=0.0) > SYMMETRY_TOL:
        raise NotSPD("matrix not symmetric within tolerance")
    s = symmetrize(m)
    if s.shape == (1, 1):
        # scalar fast path, identical semantics
        if s[0, 0] <= 0.0:
            raise NotSPD("non-positive 1x1 matrix")
        return np.array([[1.0 / s[0, 0]]])
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NotSPD(f"Cholesky factorization failed: {exc}") from exc
    chol_inv = np.linalg.solve(chol, np.eye(s.shape[0]))
    return symmetrize(chol_inv.T @ chol_inv)


def _start_vector(n: int, attempt: int) -> np.ndarray:
    if attempt == 0:
        v = 1.0 + np.arange(n) / (2.0 * n)
    else:
        # deterministic perturbed restart
        gen = np.random.Generator(np.random.PCG64(0x5EED + attempt))
        v = 1.0 + gen.random(n)
    return v / np.linalg.norm(v)


def spectral_norm(m: Matrix, *, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value, via power iteration on ``m.T @ m``.

    Iterates until the dominant-eigenvalue estimate changes by less than
    ``tol`` relative, raising ``NoConvergence`` after ``max_iter`` steps.
    Nearly tied top eigenvalues make the relative-change test stall even
    though the estimate is already accurate, so an iterate whose eigen
    residual is below sqrt(tol) is also accepted (quadratic residual
    bound). A start vector landing in the null space triggers a
    deterministic restart from a perturbed seed vector.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if m.size == 0 or not np.any(m):
        return 0.0

    gram = m.T @ m
    n = gram.shape[0]
    residual_tol = math.sqrt(tol)
    for attempt in range(4):
        v = _start_vector(n, attempt)
        prev = None
        restart = False
        residual = math.inf
        norm_w = 0.0
        for _ in range(max_iter):
            w = gram @ v
            norm_w = float(np.linalg.norm(w))
            if norm_w == 0.0:
                restart = True  # start vector was in the null space
                break
            converged = prev is not None and abs(norm_w - prev) <= tol * norm_w
            if not converged:
                rayleigh = float(v @ w)
                residual = float(np.linalg.norm(w - rayleigh * v))
                converged = residual <= residual_tol * norm_w
            v = w / norm_w
            if converged:
                return float(np.sqrt(norm_w))
            prev = norm_w
        if not restart:
            # Stalled on an eigenvalue cluster: the estimate is within the
            # residual of the cluster, which is all the precision there is.
            if residual <= 1e-4 * norm_w:
                return float(np.sqrt(norm_w))
            raise NoConvergence(
                f"power iteration did not converge in {max_iter} iterations"
            )
    raise NoConvergence("power iteration found no usable start vector")
