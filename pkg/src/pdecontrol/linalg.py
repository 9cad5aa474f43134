"""Dense symmetric solves and spectral estimates used throughout the package.

Vectors and matrices are plain float64 numpy arrays (1-D and row-major 2-D).
Everything here is pure and deterministic: identical inputs give bit-identical
outputs, so cached artifacts stay reproducible across runs and thread counts.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import FactorizationFailure, NoConvergence, NonFiniteError

SYMMETRY_RTOL = 1e-10
EIG_CLIP = 1e-12
POWER_ITER_MAX = 10_000
POWER_ITER_RTOL = 1e-8


def as_vector(x) -> np.ndarray:
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected 1-D vector, got shape {v.shape}")
    return v


def as_matrix(x) -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected 2-D matrix, got shape {a.shape}")
    return a


def require_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError("non-finite entry in input array")


def check_symmetric(gram: np.ndarray) -> None:
    scale = np.abs(gram).max() if gram.size else 0.0
    tol = SYMMETRY_RTOL * max(scale, 1.0)
    if np.abs(gram - gram.T).max() > tol:
        raise ValueError("matrix is not symmetric within tolerance")


def default_ridge_lambda(gram: np.ndarray) -> float:
    """Scale-aware ridge weight: 1e-6 * trace(G)/m (0 for an all-zero matrix)."""
    m = gram.shape[0]
    if m == 0:
        return 0.0
    return 1e-6 * float(np.trace(gram)) / m


def ridge_solve(gram, rhs, lambda_reg: float = 0.0) -> np.ndarray:
    """Solve (G + lambda*I) v = p for symmetric PSD G.

    Minimizes |Gv - p|^2 + lambda*|v|^2 via Cholesky on the shifted matrix,
    falling back to an eigendecomposition with eigenvalues clipped at 1e-12
    when the factorization breaks down (rank-deficient G with lambda ~ 0).
    """
    G = as_matrix(gram)
    p = as_vector(rhs)
    require_finite(G, p)
    if G.shape[0] != G.shape[1]:
        raise ValueError("G must be square")
    if p.shape[0] != G.shape[0]:
        raise ValueError("p length must match G")
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be nonnegative")
    check_symmetric(G)

    m = G.shape[0]
    shifted = G + lambda_reg * np.eye(m)
    try:
        chol = np.linalg.cholesky(shifted)
        v = solve_triangular(chol.T, solve_triangular(chol, p, lower=True), lower=False)
    except np.linalg.LinAlgError:
        try:
            eigvals, eigvecs = np.linalg.eigh(shifted)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - eigh on finite sym input
            raise FactorizationFailure("eigendecomposition failed") from exc
        clipped = np.maximum(eigvals, EIG_CLIP)
        v = eigvecs @ ((eigvecs.T @ p) / clipped)
    if not np.all(np.isfinite(v)):
        raise FactorizationFailure("solve produced non-finite values; lambda_reg too small")
    return v


def sym_eig_max(gram) -> float:
    """Largest eigenvalue of a symmetric matrix by shifted power iteration.

    Deterministic: fixed start vector, fixed iteration cap (10,000) and
    relative tolerance 1e-8. Raises NoConvergence if the tolerance is not met.
    """
    G = as_matrix(gram)
    require_finite(G)
    check_symmetric(G)
    m = G.shape[0]
    if m == 0:
        raise ValueError("empty matrix")

    # Gershgorin shift makes the target eigenvalue the one of largest magnitude.
    shift = float(np.abs(G).sum(axis=1).max())
    if shift == 0.0:
        return 0.0
    # Fixed, slightly uneven start vector avoids exact orthogonality to the
    # leading eigenvector for structured matrices.
    v = 1.0 + 0.01 * ((np.arange(m) % 7) - 3.0)
    v /= np.linalg.norm(v)

    prev = None
    for _ in range(POWER_ITER_MAX):
        w = G @ v + shift * v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return -shift  # v lies in the kernel of G + shift*I
        v = w / norm
        ray = float(v @ (G @ v))
        if prev is not None and abs(ray - prev) <= POWER_ITER_RTOL * max(1.0, abs(ray)):
            return ray
        prev = ray
    raise NoConvergence("power iteration did not converge in 10000 iterations")


def gaussian_elimination_solve(gram, rhs) -> np.ndarray:
    """Naive Gaussian elimination with partial pivoting.

    Independent oracle for ridge_solve (lambda=0) on small invertible systems;
    kept free of numpy.linalg on purpose.
    """
    G = as_matrix(gram).copy()
    p = as_vector(rhs).copy()
    m = G.shape[0]
    for col in range(m):
        pivot = col + int(np.argmax(np.abs(G[col:, col])))
        if abs(G[pivot, col]) < 1e-14:
            raise FactorizationFailure("pivot vanished in elimination oracle")
        if pivot != col:
            G[[col, pivot]] = G[[pivot, col]]
            p[[col, pivot]] = p[[pivot, col]]
        for row in range(col + 1, m):
            factor = G[row, col] / G[col, col]
            G[row, col:] -= factor * G[col, col:]
            p[row] -= factor * p[col]
    v = np.zeros(m)
    for row in range(m - 1, -1, -1):
        v[row] = (p[row] - G[row, row + 1 :] @ v[row + 1 :]) / G[row, row]
    return v
