"""Vector ARMA colored Gaussian noise.

The model is::

    v_k = sum_i F_i v_{k-i} + vhat_k + sum_j G_j vhat_{k-j},   vhat_k ~ N(0, Vhat)

with shaping filter ``F(z) = (I - sum F_i z^-i)^-1 (I + sum G_j z^-j)``.
Everything downstream assumes ``F(z)`` is stable and minimum phase, which
:func:`validate` checks through the roots of both matrix polynomials.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .linalg import as_mat, polynomial_matrix_roots

__all__ = [
    "TRUNC_TOL",
    "MAX_TAPS",
    "ArmaNoiseModel",
    "NoiseDiagnostics",
    "InvalidNoiseModel",
    "ImpulseResponse",
    "validate",
    "require_valid",
    "inverse_filter_taps",
    "burn_in_steps",
    "sample_path",
    "whiten_path",
    "random_model",
]

log = logging.getLogger(__name__)

TRUNC_TOL = 1e-12
MAX_TAPS = 10_000


class InvalidNoiseModel(ValueError):
    """Raised when a noise model violates stability, minimum phase or Vhat > 0."""


def _as_blocks(mats, n: int | None, name: str) -> tuple[np.ndarray, ...]:
    blocks = tuple(as_mat(m, f"{name}[{i}]") for i, m in enumerate(mats))
    for i, b in enumerate(blocks):
        if b.shape[0] != b.shape[1] or (n is not None and b.shape[0] != n):
            raise ValueError(f"{name}[{i}] has shape {b.shape}, expected ({n}, {n})")
    return blocks


@dataclass(frozen=True)
class ArmaNoiseModel:
    """Coefficients of a vector ARMA(p, q) noise process.

    Parameters
    ----------
    F : sequence of (n, n) arrays
        Autoregressive coefficients ``F_1 .. F_p``.
    G : sequence of (n, n) arrays
        Moving-average coefficients ``G_1 .. G_q``.
    Vhat : (n, n) array
        Covariance of the white innovation ``vhat_k``.
    """

    F: tuple = ()
    G: tuple = ()
    Vhat: np.ndarray = field(default_factory=lambda: np.eye(1))

    def __post_init__(self):
        Vhat = as_mat(self.Vhat, "Vhat")
        if Vhat.shape[0] != Vhat.shape[1]:
            raise ValueError(f"Vhat must be square, got shape {Vhat.shape}")
        n = Vhat.shape[0]
        object.__setattr__(self, "Vhat", Vhat)
        object.__setattr__(self, "F", _as_blocks(self.F, n, "F"))
        object.__setattr__(self, "G", _as_blocks(self.G, n, "G"))

    @classmethod
    def scalar(cls, f: Sequence[float] = (), g: Sequence[float] = (), var: float = 1.0):
        """Single-channel model from coefficient lists and innovation variance."""
        return cls(F=tuple([[c]] for c in f), G=tuple([[c]] for c in g), Vhat=[[var]])

    @classmethod
    def white(cls, Vhat) -> "ArmaNoiseModel":
        return cls(F=(), G=(), Vhat=Vhat)

    @property
    def n(self) -> int:
        return self.Vhat.shape[0]

    @property
    def p(self) -> int:
        return len(self.F)

    @property
    def q(self) -> int:
        return len(self.G)

    @property
    def order(self) -> int:
        return max(self.p, self.q)

    @property
    def is_white(self) -> bool:
        return all(not np.any(m) for m in self.F + self.G)

    @property
    def is_diagonal(self) -> bool:
        """True when Vhat and every coefficient matrix are diagonal."""
        return all(np.count_nonzero(m - np.diag(np.diag(m))) == 0
                   for m in (self.Vhat,) + self.F + self.G)

    def F_stack(self) -> np.ndarray:
        return np.array(self.F, dtype=float).reshape(self.p, self.n, self.n)

    def G_stack(self) -> np.ndarray:
        return np.array(self.G, dtype=float).reshape(self.q, self.n, self.n)

    def ar_poly(self, z) -> np.ndarray:
        """``I - sum F_i z^-i`` evaluated at each point of ``z``; shape ``z.shape + (n, n)``."""
        return self._poly(z, self.F, -1.0)

    def ma_poly(self, z) -> np.ndarray:
        """``I + sum G_j z^-j`` evaluated at each point of ``z``."""
        return self._poly(z, self.G, 1.0)

    def _poly(self, z, coeffs, sign):
        z = np.asarray(z)
        dtype = np.result_type(z.dtype, float)
        out = np.broadcast_to(np.eye(self.n, dtype=dtype), z.shape + (self.n, self.n)).copy()
        zinv = 1.0 / z
        zpow = np.ones_like(zinv)
        for c in coeffs:
            zpow = zpow * zinv
            out += sign * zpow[..., None, None] * c
        return out

    def inverse_filter(self, z) -> np.ndarray:
        """Whitening filter ``F^-1(z) = (I - sum F_i z^-i)(I + sum G_j z^-j)^-1``."""
        ar = self.ar_poly(z)
        ma = self.ma_poly(z)
        # X ma = ar  <=>  ma^T X^T = ar^T
        return np.swapaxes(np.linalg.solve(np.swapaxes(ma, -1, -2), np.swapaxes(ar, -1, -2)), -1, -2)


@dataclass(frozen=True)
class NoiseDiagnostics:
    ok: bool
    ar_max_modulus: float
    ma_max_modulus: float
    vhat_min_eig: float
    failures: tuple[str, ...] = ()


def validate(model: ArmaNoiseModel) -> NoiseDiagnostics:
    """Check stability, minimum phase and positive definiteness of ``Vhat``.

    A root of modulus exactly 1 counts as a failure.
    """
    I = np.eye(model.n)
    ar_roots = polynomial_matrix_roots([I] + [-f for f in model.F])
    ma_roots = polynomial_matrix_roots([I] + list(model.G))
    ar_max = float(np.max(np.abs(ar_roots))) if ar_roots.size else 0.0
    ma_max = float(np.max(np.abs(ma_roots))) if ma_roots.size else 0.0
    vmin = float(np.min(np.linalg.eigvalsh(0.5 * (model.Vhat + model.Vhat.T))))
    failures = []
    asym = np.max(np.abs(model.Vhat - model.Vhat.T))
    if asym > 1e-9 * max(1.0, np.max(np.abs(model.Vhat))):
        failures.append(f"Vhat is not symmetric (max asymmetry {asym:.3g})")
    if not vmin > 0:
        failures.append(f"Vhat is not positive definite (min eigenvalue {vmin:.6g})")
    if ar_max >= 1.0:
        failures.append(f"AR polynomial root modulus {ar_max:.6g} >= 1 (noise filter unstable)")
    if ma_max >= 1.0:
        failures.append(f"MA polynomial root modulus {ma_max:.6g} >= 1 (noise filter not minimum phase)")
    return NoiseDiagnostics(not failures, ar_max, ma_max, vmin, tuple(failures))


def require_valid(model: ArmaNoiseModel) -> NoiseDiagnostics:
    diag = validate(model)
    if not diag.ok:
        raise InvalidNoiseModel("; ".join(diag.failures))
    return diag


@dataclass(frozen=True)
class ImpulseResponse:
    """Taps ``H_1 .. H_L`` of ``I - F^-1(z) = sum_i H_i z^-i``."""

    H: tuple
    L: int
    trunc_tol: float = TRUNC_TOL

    @property
    def truncation_ok(self) -> bool:
        if not self.H:
            return True
        norms = [np.max(np.sum(np.abs(h), axis=1)) for h in self.H]
        return norms[-1] <= self.trunc_tol * max(max(norms), np.finfo(float).tiny)


def inverse_filter_taps(model: ArmaNoiseModel, L: int | None = None,
                        trunc_tol: float = TRUNC_TOL, max_len: int = MAX_TAPS) -> ImpulseResponse:
    """Power-series taps of ``I - F^-1(z)``.

    Uses ``H_k = F_k + G_k - sum_{j=1}^{min(q, k-1)} H_{k-j} G_j``, which
    follows from matching powers of ``z^-1`` in
    ``(I - sum F_i z^-i) = (I - sum H_i z^-i)(I + sum G_j z^-j)``.

    With ``L=None`` the series is extended until the last ``max(q, 1)`` taps
    are all below ``trunc_tol`` times the largest tap, capped at ``max_len``.
    """
    p, q, n = model.p, model.q, model.n
    if L is not None and L < model.order:
        raise ValueError(f"L={L} is shorter than the model order {model.order}")
    if model.is_white:
        return ImpulseResponse(H=(), L=0, trunc_tol=trunc_tol)
    limit = max_len if L is None else L
    H: list[np.ndarray] = []
    peak = 0.0
    window = max(q, 1)
    for k in range(1, limit + 1):
        h = np.zeros((n, n))
        if k <= p:
            h += model.F[k - 1]
        if k <= q:
            h += model.G[k - 1]
        for j in range(1, min(q, k - 1) + 1):
            h -= H[k - j - 1] @ model.G[j - 1]
        H.append(h)
        peak = max(peak, float(np.max(np.sum(np.abs(h), axis=1))))
        if L is None and k >= model.order:
            tail = max(float(np.max(np.sum(np.abs(t), axis=1))) for t in H[-window:])
            if tail <= trunc_tol * peak:
                break
    else:
        if L is None:
            log.warning("inverse filter taps hit the %d-tap cap before decaying", limit)
    return ImpulseResponse(H=tuple(H), L=len(H), trunc_tol=trunc_tol)


def burn_in_steps(model: ArmaNoiseModel) -> int:
    return max(200, 20 * model.order)


def sample_path(model: ArmaNoiseModel, T: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``T`` steps of colored noise.

    Innovations are ``N(0, Vhat)`` via the Cholesky factor applied to standard
    normals from ``numpy.random.default_rng(seed)`` (PCG64). The recursion
    starts from zeros and the first :func:`burn_in_steps` samples are dropped.

    Returns
    -------
    v, vhat : (T, n) arrays
        Noise samples and the innovations that produced them.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    burn = burn_in_steps(model)
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(model.Vhat)
    vhat = rng.standard_normal((burn + T, model.n)) @ chol.T
    if model.is_white:
        v = vhat.copy()
    else:
        v = _kernels.arma_filter(model.F_stack(), model.G_stack(), np.ascontiguousarray(vhat))
    return v[burn:], vhat[burn:]


def whiten_path(model: ArmaNoiseModel, v) -> np.ndarray:
    """Recover innovations with zero initial conditions.

    ``vhat_k = -sum G_j vhat_{k-j} + v_k - sum F_i v_{k-i}``.
    """
    v = np.ascontiguousarray(v, dtype=float)
    if v.ndim != 2 or v.shape[1] != model.n:
        raise ValueError(f"expected a (T, {model.n}) path, got shape {v.shape}")
    if model.is_white:
        return v.copy()
    return _kernels.arma_filter(-model.G_stack(), -model.F_stack(), v)


def _scale_roots(coeffs, target):
    n = coeffs[0].shape[0]
    roots = polynomial_matrix_roots([np.eye(n)] + list(coeffs))
    rmax = float(np.max(np.abs(roots)))
    if rmax == 0.0:
        return list(coeffs)
    s = target / rmax
    return [c * s ** (i + 1) for i, c in enumerate(coeffs)]


def random_model(rng: np.random.Generator, n: int, p: int, q: int, diagonal: bool = False,
                 radius: tuple[float, float] = (0.2, 0.85),
                 vhat_range: tuple[float, float] = (0.5, 3.0)) -> ArmaNoiseModel:
    """Random stable, minimum-phase ARMA model for property tests.

    Coefficients are Gaussian, then rescaled so the largest root modulus of
    each polynomial is drawn uniformly from ``radius``.
    """
    def draw(order):
        if order == 0:
            return []
        if diagonal:
            mats = [np.diag(rng.normal(size=n)) for _ in range(order)]
        else:
            mats = [rng.normal(size=(n, n)) / np.sqrt(n) for _ in range(order)]
        return mats

    F = draw(p)
    G = draw(q)
    if F:
        # AR roots come from I - sum F z^-i, i.e. companion of [I, -F...]
        F = [-c for c in _scale_roots([-f for f in F], rng.uniform(*radius))]
    if G:
        G = _scale_roots(G, rng.uniform(*radius))
    eigs = rng.uniform(*vhat_range, size=n)
    if diagonal:
        Vhat = np.diag(eigs)
    else:
        Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        Vhat = (Q * eigs) @ Q.T
        Vhat = 0.5 * (Vhat + Vhat.T)
    return ArmaNoiseModel(F=tuple(F), G=tuple(G), Vhat=Vhat)
