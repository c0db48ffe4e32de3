"""Dense real-matrix helpers used throughout the package.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The helpers
here add the few conventions the rest of the code depends on: column-major
``vec``, descending symmetric eigenvalues, and block-companion root finding
for matrix polynomials in ``z^-1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "SYM_TOL",
    "EIG_TOL",
    "SymEig",
    "as_mat",
    "kron",
    "vec",
    "unvec",
    "sym_eig",
    "spectral_radius",
    "polynomial_matrix_roots",
    "companion",
]

# relative tolerances, scaled by the infinity norm of the input
SYM_TOL = 1e-9
EIG_TOL = 1e-10


def as_mat(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a finite 2-D float64 array (copying), or raise ValueError."""
    a = np.array(m, dtype=float, copy=True)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


def _norm_inf(m: np.ndarray) -> float:
    return float(np.max(np.sum(np.abs(m), axis=1))) if m.size else 0.0


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition ``m = U diag(lam) U^T`` with ``lam`` descending."""

    U: np.ndarray
    lam: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.lam) @ self.U.T


def kron(a, b) -> np.ndarray:
    """Kronecker product; block ``(i, j)`` of the result is ``a[i, j] * b``."""
    return np.kron(as_mat(a, "a"), as_mat(b, "b"))


def vec(m) -> np.ndarray:
    """Stack the columns of a square matrix into one vector.

    Column ``j`` of ``m`` lands in slots ``j*n .. j*n + n - 1``. This is the
    ordering for which ``vec(B X A) = kron(A.T, B) @ vec(X)``.
    """
    a = np.asarray(m)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"vec expects a square matrix, got shape {a.shape}")
    return a.reshape(-1, order="F").copy()


def unvec(v, n: int) -> np.ndarray:
    """Inverse of :func:`vec` for an ``n x n`` matrix."""
    v = np.asarray(v)
    if n <= 0:
        raise ValueError("n must be positive")
    if v.ndim != 1 or v.shape[0] != n * n:
        raise ValueError(f"unvec expects a vector of length {n * n}, got shape {v.shape}")
    return v.reshape(n, n, order="F").copy()


def sym_eig(m) -> SymEig:
    """Orthogonal eigendecomposition of a symmetric matrix.

    The input is symmetrized as ``(m + m.T) / 2`` before factoring; an input
    whose asymmetry exceeds ``SYM_TOL * ||m||_inf`` is rejected.

    Returns
    -------
    SymEig
        ``U`` orthogonal with eigenvector columns, ``lam`` sorted descending.
        For repeated eigenvalues any orthonormal basis of the eigenspace may
        be returned.
    """
    a = as_mat(m)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"sym_eig expects a square matrix, got shape {a.shape}")
    scale = max(_norm_inf(a), 1.0)
    if _norm_inf(a - a.T) > SYM_TOL * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    lam, U = np.linalg.eigh(0.5 * (a + a.T))
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    U = U[:, order]
    return SymEig(U=U, lam=lam)


def spectral_radius(m) -> float:
    """Largest eigenvalue modulus of a square matrix (general eigensolver)."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"spectral_radius expects a square matrix, got shape {a.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def companion(coeffs: Sequence) -> np.ndarray:
    """Block companion matrix of ``sum_k coeffs[k] z^(d-k)``.

    ``coeffs[0]`` is the leading block and must be invertible; the result is
    ``nd x nd`` with the normalized blocks ``-coeffs[0]^-1 coeffs[k]`` on the
    first block row and identities on the block sub-diagonal.
    """
    blocks = [np.atleast_2d(np.asarray(c, dtype=float)) for c in coeffs]
    if not blocks:
        raise ValueError("need at least the leading coefficient")
    n = blocks[0].shape[0]
    for b in blocks:
        if b.shape != (n, n):
            raise ValueError("all coefficient blocks must share one square shape")
    d = len(blocks) - 1
    lead = blocks[0]
    # rank test rather than det: det underflows for well-conditioned large blocks
    if np.linalg.matrix_rank(lead) < n:
        raise np.linalg.LinAlgError("leading coefficient block is singular")
    comp = np.zeros((n * d, n * d))
    for k in range(1, d + 1):
        comp[:n, (k - 1) * n:k * n] = -np.linalg.solve(lead, blocks[k])
    if d > 1:
        comp[n:, :-n] = np.eye(n * (d - 1))
    return comp


def polynomial_matrix_roots(coeffs: Sequence) -> np.ndarray:
    """Roots of ``det(sum_k coeffs[k] z^(d-k)) = 0``.

    ``coeffs[k]`` multiplies ``z^-k`` in the usual filter notation, so for
    ``I - F_1 z^-1 - ... - F_p z^-p`` pass ``[I, -F_1, ..., -F_p]``. The roots
    are the eigenvalues of the block companion matrix; order is unspecified.
    """
    if len(coeffs) <= 1:
        return np.zeros(0, dtype=complex)
    return np.linalg.eigvals(companion(coeffs)).astype(complex)
