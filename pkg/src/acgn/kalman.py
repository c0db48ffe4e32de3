"""Steady-state Kalman filtering with ARMA measurement noise.

The plant is noise-free and anti-stable::

    x_{k+1} = A x_k,     y_k = C x_k + v_k,

with ``v`` a vector ARMA process. Whitening ``y`` through ``F^-1(z)`` turns
the problem into an ordinary Kalman filter with white measurement noise of
covariance ``Vhat`` and an equivalent output matrix ``Chat``; see
:func:`compute_chat`. :func:`design_c_for_identity` picks ``C`` so that
``Chat = I``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .linalg import as_mat, kron, spectral_radius, unvec, vec
from .noise import ArmaNoiseModel

__all__ = [
    "ARE_TOL",
    "MAX_ITER",
    "RANK_TOL",
    "PlantSpec",
    "FilterSolution",
    "RiccatiNonConvergence",
    "riccati_step",
    "are_residual",
    "solve_are",
    "eig_pair",
    "compute_chat",
    "design_c_for_identity",
    "observability_rank",
    "solve_variant",
]

log = logging.getLogger(__name__)

ARE_TOL = 1e-10
MAX_ITER = 100_000
RANK_TOL = 1e-9
UNIT_CIRCLE_TOL = 1e-9

EigPair = Tuple[np.ndarray, np.ndarray]


class RiccatiNonConvergence(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"Riccati iteration did not converge in {iterations} steps "
                         f"(last step change {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class PlantSpec:
    """Anti-stable plant observed through ARMA noise."""

    A: np.ndarray
    C: np.ndarray
    noise: ArmaNoiseModel

    def __post_init__(self):
        object.__setattr__(self, "A", as_mat(self.A, "A"))
        object.__setattr__(self, "C", as_mat(self.C, "C"))
        n = self.noise.n
        if self.A.shape != (n, n) or self.C.shape != (n, n):
            raise ValueError(f"A and C must be {n}x{n} to match the noise model")

    def check(self) -> list[str]:
        """Return the violated plant assumptions (empty when all hold)."""
        issues = []
        mods = np.abs(np.linalg.eigvals(self.A))
        if np.min(mods) < 1.0 - UNIT_CIRCLE_TOL:
            issues.append(f"A is not anti-stable (eigenvalue modulus {np.min(mods):.6g} < 1)")
        if observability_rank(self.A, self.C) < self.A.shape[0]:
            issues.append("(A, C) is not observable")
        return issues


@dataclass(frozen=True)
class FilterSolution:
    P: np.ndarray
    K: np.ndarray
    Chat: np.ndarray
    iterations: int
    residual: float
    converged: bool = True
    degenerate: bool = False


def riccati_step(P, A, C, V) -> np.ndarray:
    """One step of ``P <- A P A^T - A P C^T (C P C^T + V)^-1 C P A^T``, symmetrized."""
    P = np.asarray(P, dtype=float)
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    V = np.asarray(V, dtype=float)
    n = A.shape[0]
    if P.shape != (n, n) or A.shape != (n, n) or C.shape[1] != n or V.shape != (C.shape[0],) * 2:
        raise ValueError("dimension mismatch in riccati_step")
    APCt = A @ P @ C.T
    S = C @ P @ C.T + V
    nxt = A @ P @ A.T - APCt @ np.linalg.solve(S, APCt.T)
    return 0.5 * (nxt + nxt.T)


def are_residual(P, A, C, V) -> float:
    """Infinity norm of ``P - A P A^T + A P C^T (C P C^T + V)^-1 C P A^T``."""
    r = np.asarray(P) - riccati_step(P, A, C, V)
    return float(np.max(np.sum(np.abs(r), axis=1)))


def _norm_inf(m) -> float:
    return float(np.max(np.sum(np.abs(m), axis=1)))


def _on_unit_circle(A) -> bool:
    return bool(np.any(np.abs(np.abs(np.linalg.eigvals(A)) - 1.0) <= UNIT_CIRCLE_TOL))


def solve_are(A, C, V, P0=None, tol: float = ARE_TOL, max_iter: int = MAX_ITER) -> FilterSolution:
    """Steady-state covariance and observer gain by Riccati fixed-point iteration.

    Iterates from ``P0`` (default ``V``) until the step change falls below
    ``tol * (1 + ||P||_inf)``. ``P0 = 0`` is rejected because the zero matrix
    is itself a fixed point of the recursion.

    When ``A`` has an eigenvalue on the unit circle the nonzero solution
    degenerates towards zero along that mode and convergence is only
    algebraic; such runs are returned with ``degenerate=True`` instead of
    raising.
    """
    A = as_mat(A, "A")
    C = as_mat(C, "C")
    V = as_mat(V, "V")
    P = as_mat(V if P0 is None else P0, "P0").copy()
    if not np.any(P):
        raise ValueError("P0 = 0 converges to the trivial zero solution")
    degenerate = _on_unit_circle(A)
    step = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        nxt = riccati_step(P, A, C, V)
        step = _norm_inf(nxt - P)
        done = step <= tol * (1.0 + _norm_inf(P))
        P = nxt
        if done:
            converged = True
            break
    if not converged:
        if not degenerate:
            raise RiccatiNonConvergence(it, step)
        log.info("degenerate Riccati iteration stopped after %d steps (step %.3e)", it, step)
    S = C @ P @ C.T + V
    K = np.linalg.solve(S.T, (A @ P @ C.T).T).T
    if not degenerate and spectral_radius(A - K @ C) >= 1.0:
        raise RuntimeError("converged Riccati solution does not stabilize A - K C")
    return FilterSolution(P=P, K=K, Chat=C, iterations=it,
                          residual=are_residual(P, A, C, V),
                          converged=converged, degenerate=degenerate)


def eig_pair(A) -> EigPair:
    """``(T, lam)`` with ``A = T diag(lam) T^-1`` (possibly complex)."""
    lam, T = np.linalg.eig(as_mat(A, "A"))
    return T, lam


def _middle_factors(lam, noise: ArmaNoiseModel):
    n = noise.n
    lam = np.asarray(lam)
    dtype = np.result_type(lam.dtype, float)
    ar = np.eye(n * n, dtype=dtype)
    ma = np.eye(n * n, dtype=dtype)
    for i, Fi in enumerate(noise.F, start=1):
        ar -= np.kron(np.diag(lam ** -i), Fi)
    for j, Gj in enumerate(noise.G, start=1):
        ma += np.kron(np.diag(lam ** -j), Gj)
    return ar, ma


def _check_eig_pair(A_eig: EigPair, n: int):
    T, lam = A_eig
    T = np.asarray(T)
    lam = np.asarray(lam)
    if T.shape != (n, n) or lam.shape != (n,):
        raise ValueError(f"eigen-pair must be ({n}x{n}, {n}), got {T.shape}, {lam.shape}")
    if np.min(np.abs(lam)) < 1.0 - UNIT_CIRCLE_TOL:
        raise ValueError("all eigenvalues must have modulus >= 1")
    return T, lam


def _sandwich(T, middle, x):
    """``(T^-T kron I) middle (T^T kron I) x`` without forming the inverse."""
    n = T.shape[0]
    I = np.eye(n)
    inner = middle @ (np.kron(T.T, I) @ x)
    return np.linalg.solve(np.kron(T.T, I), inner)


def _realify(m, what: str):
    if np.iscomplexobj(m):
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m.imag)) > 1e-9 * scale:
            raise ValueError(f"{what} has a non-negligible imaginary part")
        return np.ascontiguousarray(m.real)
    return m


def compute_chat(A_eig: EigPair, C, noise: ArmaNoiseModel) -> np.ndarray:
    """Equivalent output matrix seen after whitening the measurements.

    ``vec(Chat) = (T^-T kron I)(I - sum Lam^-i kron F_i)(I + sum Lam^-j kron G_j)^-1 (T^T kron I) vec(C)``

    which equals ``C - sum_i H_i C A^-i`` for the taps ``H_i`` of
    ``I - F^-1(z)``.

    Parameters
    ----------
    A_eig : (T, lam)
        Eigenvectors and eigenvalues of ``A``; every ``|lam|`` must be >= 1.
    C : (n, n) array
    noise : ArmaNoiseModel
        Assumed already validated.
    """
    n = noise.n
    T, lam = _check_eig_pair(A_eig, n)
    C = as_mat(C, "C")
    ar, ma = _middle_factors(lam, noise)
    try:
        middle = np.linalg.solve(ma.T, ar.T).T
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("MA factor is singular; noise model is not minimum phase") from exc
    return _realify(unvec(_sandwich(T, middle, vec(C).astype(middle.dtype)), n), "Chat")


def design_c_for_identity(A_eig: EigPair, noise: ArmaNoiseModel, check: bool = True) -> np.ndarray:
    """Output matrix ``C`` for which :func:`compute_chat` returns the identity.

    ``vec(C) = (T^-T kron I)(I + sum Lam^-j kron G_j)(I - sum Lam^-i kron F_i)^-1 (T^T kron I) vec(I)``
    """
    n = noise.n
    T, lam = _check_eig_pair(A_eig, n)
    ar, ma = _middle_factors(lam, noise)
    try:
        middle = np.linalg.solve(ar.T, ma.T).T
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("AR factor is singular; noise model is not stable") from exc
    C = _realify(unvec(_sandwich(T, middle, vec(np.eye(n)).astype(middle.dtype)), n), "C")
    if check:
        err = np.max(np.abs(compute_chat(A_eig, C, noise) - np.eye(n)))
        if err > 1e-9:
            raise RuntimeError(f"designed C does not give Chat = I (error {err:.3e})")
    return C


def observability_rank(A, C, rank_tol: float = RANK_TOL) -> int:
    """Numerical rank of ``[C; CA; ...; CA^(n-1)]``."""
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    rows = [C]
    for _ in range(n - 1):
        rows.append(rows[-1] @ A)
    s = np.linalg.svd(np.vstack(rows), compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


def solve_variant(plant: PlantSpec, P0=None, tol: float = ARE_TOL,
                  max_iter: int = MAX_ITER) -> FilterSolution:
    """Steady-state Kalman filter for a plant measured through ARMA noise.

    Forms ``Chat`` from the eigen-decomposition of ``A`` and iterates the
    Riccati equation with ``(A, Chat, Vhat)``.
    """
    chat = compute_chat(eig_pair(plant.A), plant.C, plant.noise)
    sol = solve_are(plant.A, chat, plant.noise.Vhat, P0=P0, tol=tol, max_iter=max_iter)
    return FilterSolution(P=sol.P, K=sol.K, Chat=chat, iterations=sol.iterations,
                          residual=sol.residual, converged=sol.converged,
                          degenerate=sol.degenerate)
