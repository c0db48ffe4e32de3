"""Feedback-capacity lower bounds and the channel designs that attain them.

A design picks per-eigenchannel powers ``P_l`` of the innovation covariance
``Vhat = U diag(V_l) U^T`` and sets::

    A = U Lam U^T,   Lam = diag(s_l a_l),   a_l = sqrt(1 + P_l / V_l),

with ``C`` chosen so the whitened output matrix is the identity. The error
covariance is then ``P = U diag(P_l) U^T``, the rate is ``sum log2 a_l``
bits per channel use, and the transmit power is ``tr(C P C^T)``.

Because ``C u_l = M(s_l a_l) u_l`` with
``M(x) = (I + sum G_j x^-j)(I - sum F_i x^-i)^-1``, the power splits into
per-channel costs ``P_l * ||M(s_l a_l) u_l||^2``. The optimizers below use
that split for speed; :func:`build_design` always re-derives ``C`` through the
full Kronecker construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .kalman import design_c_for_identity
from .linalg import SymEig, sym_eig
from .noise import ArmaNoiseModel, require_valid

__all__ = [
    "POW_TOL",
    "Allocation",
    "ChannelDesign",
    "CapacityResult",
    "build_design",
    "water_level",
    "waterfill",
    "channel_weight",
    "RationalWeight",
    "design_c_columns",
    "solve_independent",
    "solve_general",
    "scalar_bound",
    "solve",
]

log = logging.getLogger(__name__)

POW_TOL = 1e-8
ARE_CHECK_TOL = 1e-9
GOLDEN_MAXITER = 200
ROOT_XTOL = 1e-13
COARSE_STEP = 1e-3
FINE_STEP = 1e-9
POLISH_TOP = 3


@dataclass(frozen=True)
class Allocation:
    """Eigenchannel powers with their sign branch.

    ``signs[l]`` is the sign of the l-th eigenvalue of ``A``.
    """

    P: np.ndarray
    Vhat_eigs: np.ndarray
    signs: np.ndarray
    water_level: float | None = None

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float).copy()
        V = np.asarray(self.Vhat_eigs, dtype=float).copy()
        s = np.broadcast_to(np.asarray(self.signs, dtype=int), P.shape).copy()
        if P.shape != V.shape or P.ndim != 1:
            raise ValueError("P and Vhat_eigs must be vectors of equal length")
        if np.any(P < 0) or not np.all(np.isfinite(P)):
            raise ValueError("powers must be finite and nonnegative")
        if np.any(V <= 0):
            raise ValueError("Vhat eigenvalues must be positive")
        if not np.all(np.isin(s, (-1, 1))):
            raise ValueError("signs must be +1 or -1")
        for arr in (P, V, s):
            arr.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Vhat_eigs", V)
        object.__setattr__(self, "signs", s)

    @property
    def a(self) -> np.ndarray:
        return np.sqrt(1.0 + self.P / self.Vhat_eigs)

    @property
    def lam(self) -> np.ndarray:
        return self.signs * self.a

    @property
    def sign(self) -> int:
        """Common sign of all channels, or 0 when the branches are mixed."""
        if np.all(self.signs == 1):
            return 1
        if np.all(self.signs == -1):
            return -1
        return 0

    @property
    def rate_bits(self) -> float:
        return float(np.sum(0.5 * np.log2(1.0 + self.P / self.Vhat_eigs)))

    @property
    def rate_bits_from_a(self) -> float:
        return float(np.sum(np.log2(self.a)))


@dataclass(frozen=True)
class ChannelDesign:
    A: np.ndarray
    C: np.ndarray
    P: np.ndarray
    Khat: np.ndarray
    U: np.ndarray
    alloc: Allocation
    transmit_power: float
    are_residual: float


@dataclass(frozen=True)
class CapacityResult:
    lower_bound_bits: float
    design: ChannelDesign
    budget: float
    method: str
    diagnostics: dict = field(default_factory=dict)


def _check_budget(budget):
    if not budget > 0:
        raise ValueError("budget must be positive")


def _are3_residual(P, A, Vhat) -> float:
    r = P - A @ P @ A.T + A @ P @ np.linalg.solve(P + Vhat, P @ A.T)
    return float(np.max(np.sum(np.abs(r), axis=1)))


def build_design(noise: ArmaNoiseModel, P_alloc, sign=1, basis: SymEig | None = None) -> ChannelDesign:
    """Assemble ``A``, ``C``, ``P`` and ``Khat`` for a given power allocation.

    Parameters
    ----------
    noise : ArmaNoiseModel
    P_alloc : array_like
        Nonnegative power per eigenchannel, in the order of ``basis``.
    sign : int or array_like of int
        Sign branch, either one value for all channels or one per channel.
    basis : SymEig, optional
        Eigen-decomposition of ``Vhat`` to use; default :func:`sym_eig`.
        Eigenvalue order need not be sorted.

    Raises
    ------
    ValueError
        For an all-zero allocation.
    RuntimeError
        If the closed-form covariance fails the Riccati residual check.
    """
    basis = sym_eig(noise.Vhat) if basis is None else basis
    U = np.asarray(basis.U, dtype=float)
    alloc = Allocation(P=P_alloc, Vhat_eigs=basis.lam, signs=sign)
    if alloc.P.shape != (noise.n,):
        raise ValueError(f"expected {noise.n} channel powers, got {alloc.P.shape}")
    if not np.any(alloc.P > 0):
        raise ValueError("allocation must not be all zero")
    lam = alloc.lam
    A = (U * lam) @ U.T
    C = design_c_for_identity((U, lam), noise)
    P = (U * alloc.P) @ U.T
    P = 0.5 * (P + P.T)
    res = _are3_residual(P, A, noise.Vhat)
    if res > ARE_CHECK_TOL * (1.0 + float(np.max(np.sum(np.abs(P), axis=1)))):
        raise RuntimeError(f"closed-form covariance violates the Riccati equation (residual {res:.3e})")
    Khat = A @ P @ np.linalg.inv(P + noise.Vhat)
    tp = float(np.trace(C @ P @ C.T))
    return ChannelDesign(A=A, C=C, P=P, Khat=Khat, U=U, alloc=alloc,
                         transmit_power=tp, are_residual=res)


def water_level(Vhat_eigs, budget: float) -> float:
    """Level ``zeta`` with ``sum max(0, zeta - V_l) = budget``."""
    _check_budget(budget)
    V = np.asarray(Vhat_eigs, dtype=float)
    if np.any(V <= 0):
        raise ValueError("noise levels must be positive")
    spent = lambda z: float(np.sum(np.maximum(0.0, z - V))) - budget
    lo, hi = float(np.min(V)), float(np.max(V)) + 2.0 * budget
    return brentq(spent, lo, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps, maxiter=500)


def waterfill(Vhat_eigs, budget: float, sign: int = 1) -> Allocation:
    """Classical water-filling: ``P_l = max(0, zeta - V_l)``."""
    V = np.asarray(Vhat_eigs, dtype=float)
    zeta = water_level(V, budget)
    P = np.maximum(0.0, zeta - V)
    P *= budget / P.sum()
    return Allocation(P=P, Vhat_eigs=V, signs=sign, water_level=zeta)


# --- per-channel power cost --------------------------------------------------

def channel_weight(noise: ArmaNoiseModel, u, x) -> np.ndarray:
    """``||M(x) u||^2`` for each point of ``x``, ``M(x) = ma(x) ar(x)^-1``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if noise.is_white:
        return np.full(x.shape, float(np.dot(u, u)))
    y = np.linalg.solve(noise.ar_poly(x), np.broadcast_to(u, x.shape + (noise.n,))[..., None])
    m = noise.ma_poly(x) @ y
    return np.sum(m[..., 0] ** 2, axis=-1)


class RationalWeight:
    """``||M(x) u||^2`` as ``sum_r N_r(y)^2 / D(y)^2`` with ``y = 1/x``.

    ``D = det(I - sum F_i y^i)`` and ``N = D (I + sum G_j y^j)(I - sum F_i y^i)^-1 u``
    are polynomials in ``y``; their coefficients are recovered exactly (up to
    rounding) by an FFT of values on the unit circle, where the AR
    factor is invertible.
    """

    def __init__(self, noise: ArmaNoiseModel, u):
        self.u = np.asarray(u, dtype=float)
        n, p, q = noise.n, noise.p, noise.q
        self.const = None
        if noise.is_white:
            self.const = float(self.u @ self.u)
            return
        deg_d = n * p
        deg_n = q + (n - 1) * p
        K = 8
        while K <= max(deg_d, deg_n) + 1:
            K *= 2
        y = np.exp(2j * np.pi * np.arange(K) / K)
        ar = noise.ar_poly(1.0 / y)
        ma = noise.ma_poly(1.0 / y)
        det = np.linalg.det(ar)
        num = (ma @ np.linalg.solve(ar, np.broadcast_to(self.u, (K, n))[..., None]))[..., 0]
        num = num * det[:, None]
        den = (np.fft.fft(det) / K).real[:deg_d + 1][::-1]
        nums = (np.fft.fft(num, axis=0) / K).real[:deg_n + 1][::-1].T
        # one descending coefficient table, denominator first
        width = max(deg_d, deg_n) + 1
        table = np.zeros((n + 1, width))
        table[0, width - den.size:] = den
        table[1:, width - nums.shape[1]:] = nums
        self.table = table
        self.rows = [list(map(float, r)) for r in table]

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.const is not None:
            return np.full(x.shape, self.const)
        if x.size == 1:
            y = 1.0 / float(x.flat[0])
            vals = []
            for row in self.rows:
                acc = 0.0
                for c in row:
                    acc = acc * y + c
                vals.append(acc)
            d = vals[0]
            return np.full(x.shape, sum(v * v for v in vals[1:]) / (d * d))
        y = 1.0 / x.ravel()
        acc = np.zeros((self.table.shape[0], y.size))
        for c in self.table.T:
            acc = acc * y + c[:, None]
        return (np.sum(acc[1:] ** 2, axis=0) / acc[0] ** 2).reshape(x.shape)


def _diag_weight(noise: ArmaNoiseModel, l: int, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    num = np.ones_like(x)
    den = np.ones_like(x)
    for j, G in enumerate(noise.G, start=1):
        num += G[l, l] * x ** -j
    for i, F in enumerate(noise.F, start=1):
        den -= F[l, l] * x ** -i
    return (num / den) ** 2


def design_c_columns(noise: ArmaNoiseModel, U, lam) -> np.ndarray:
    """``C = sum_l M(lam_l) u_l u_l^T``; same as the Kronecker design for orthogonal ``U``."""
    U = np.asarray(U, dtype=float)
    lam = np.asarray(lam, dtype=float)
    ar = noise.ar_poly(lam)
    ma = noise.ma_poly(lam)
    cols = np.stack([ma[l] @ np.linalg.solve(ar[l], U[:, l]) for l in range(noise.n)], axis=1)
    return cols @ U.T


class _Channel:
    """Power cost ``w(s a) (a^2 - 1) V`` of one eigenchannel."""

    def __init__(self, weight: Callable[[np.ndarray], np.ndarray], V: float):
        self.weight = weight
        self.V = float(V)

    def cost(self, a, s: int) -> np.ndarray:
        a = np.atleast_1d(np.asarray(a, dtype=float))
        return self.weight(s * a) * (a * a - 1.0) * self.V


def _largest_root(fun, target: float, x0: float, scale: float, n_grid: int = 257) -> float:
    """Largest ``x >= x0`` with ``fun(x) = target``, given ``fun(x0) <= target``.

    ``fun`` must be vectorized and eventually increasing. The bracket is grown
    by doubling, scanned on a geometric grid for the last upward crossing and
    then refined by Brent's method.
    """
    f1 = lambda x: float(fun(np.array([x]))[0])
    hi = x0 + max(scale, 1e-9 * max(1.0, abs(x0)))
    for _ in range(2000):
        if f1(hi) > target:
            top = x0 + 4.0 * (hi - x0)
            span = top - x0
            grid = x0 + np.concatenate(([0.0], np.geomspace(1e-12 * span, span, n_grid)))
            vals = fun(grid)
            if vals[-1] > target:
                above = vals > target
                idx = np.nonzero(~above[:-1] & above[1:])[0]
                i = int(idx[-1])
                lo_x, hi_x = float(grid[i]), float(grid[i + 1])
                if vals[i] == target:
                    return lo_x
                return brentq(lambda x: f1(x) - target, lo_x, hi_x,
                              xtol=ROOT_XTOL * max(1.0, abs(hi_x)), rtol=4 * np.finfo(float).eps,
                              maxiter=500)
            hi = top
        hi = x0 + 2.0 * (hi - x0)
    raise RuntimeError("could not bracket the budget crossing")


def _a_cap(ch: _Channel, s: int, budget: float) -> float:
    return _largest_root(lambda a: ch.cost(a, s), budget, 1.0, np.sqrt(1.0 + budget / ch.V) - 1.0)


def _best_a(ch: _Channel, s: int, mu: float, a_cap: float, grid: np.ndarray, costs: np.ndarray):
    """Maximize ``log a - mu * cost(a)`` over ``[1, a_cap]``."""
    obj = np.log(grid) - mu * costs
    i = int(np.argmax(obj))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    best_a, best_val = float(grid[i]), float(obj[i])
    if hi > lo:
        res = minimize_scalar(lambda a: -(np.log(a) - mu * ch.cost(a, s)[0]), bounds=(lo, hi),
                              method="bounded",
                              options={"xatol": 1e-14, "maxiter": GOLDEN_MAXITER})
        if -res.fun > best_val:
            best_a, best_val = float(res.x), float(-res.fun)
    return best_a, best_val


def _lagrangian(channels: Sequence[_Channel], budget: float, sign_sets: Sequence[Sequence[int]],
                n_grid: int = 400):
    """Separable maximization of ``sum log a_l`` subject to ``sum cost_l = budget``.

    Bisects the multiplier ``mu`` so the per-channel maximizers of
    ``log a - mu cost(a)`` spend the budget, then assigns any leftover (from
    jumps in the dual) to the channel that gains most from it.

    Returns ``(a, signs, spend)``.
    """
    n = len(channels)
    tables = []
    for l, ch in enumerate(channels):
        per_sign = {}
        for s in sign_sets[l]:
            cap = _a_cap(ch, s, budget)
            grid = np.exp(np.linspace(0.0, np.log(cap), n_grid))
            per_sign[s] = (cap, grid, ch.cost(grid, s))
        tables.append(per_sign)

    def respond(mu):
        a = np.ones(n)
        signs = np.ones(n, dtype=int)
        spend = np.zeros(n)
        for l, ch in enumerate(channels):
            best = None
            for s, (cap, grid, costs) in tables[l].items():
                a_l, val = _best_a(ch, s, mu, cap, grid, costs)
                if best is None or val > best[1] + 1e-15:
                    best = (a_l, val, s)
            a[l], signs[l] = best[0], best[2]
            spend[l] = ch.cost(a[l], signs[l])[0]
        return a, signs, spend

    if n == 1:
        s_best, cap_best = None, -np.inf
        for s, (cap, _, _) in tables[0].items():
            if cap > cap_best:
                s_best, cap_best = s, cap
        return np.array([cap_best]), np.array([s_best]), np.array([budget])

    lo, hi = -30.0, 30.0  # log10 of mu
    lo_x = respond(10.0 ** lo)
    hi_x = respond(10.0 ** hi)
    if hi_x[2].sum() > budget:
        raise RuntimeError("multiplier bracket too small")
    if lo_x[2].sum() <= budget:
        feasible = lo_x
    else:
        feasible = hi_x
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            cand = respond(10.0 ** mid)
            if cand[2].sum() > budget:
                lo = mid
            else:
                hi, feasible = mid, cand
            if hi - lo < 1e-15:
                break
    a, signs, spend = (x.copy() for x in feasible)
    leftover = budget - spend.sum()
    if leftover > 0:
        best_gain, best_l, best_a = -np.inf, None, None
        for l, ch in enumerate(channels):
            s = int(signs[l])
            target = spend[l] + leftover
            new_a = _largest_root(lambda x, ch=ch, s=s: ch.cost(x, s), target, 1.0,
                                  np.sqrt(1.0 + target / ch.V) - 1.0)
            gain = np.log(new_a) - np.log(a[l])
            if gain > best_gain:
                best_gain, best_l, best_a = gain, l, new_a
        a[best_l] = best_a
        spend[best_l] += leftover
    return a, signs, spend


def _cost_slope(ch: _Channel, a: float, s: int) -> float:
    """``a * d cost / d a`` by a five-point central difference."""
    h = 1e-4 * (a - 1.0) if a - 1.0 < 1e-1 else 1e-5 * a
    x = a + h * np.array([-2.0, -1.0, 1.0, 2.0])
    c = ch.cost(x, s)
    return a * (c[0] - 8.0 * c[1] + 8.0 * c[2] - c[3]) / (12.0 * h)


def _kkt_polish(channels: Sequence[_Channel], a, signs, budget: float, rel: float = 1e-4):
    """Refine a local optimum by solving its first-order conditions.

    Value comparisons cannot resolve the allocation much below the square
    root of machine precision because the rate is flat at the optimum. With
    the active set and signs fixed, the conditions ``a_l cost_l'(a_l) = 1/mu``
    and ``sum cost_l = budget`` are solved by nested Brent searches in a
    relative window ``rel`` around the input. Returns the input unchanged
    when the window does not bracket a solution or the rate would drop.
    """
    a = np.asarray(a, dtype=float)
    act = [l for l in range(len(a)) if a[l] > 1.0 + 1e-12]
    if len(act) < 2:
        return a
    signs = [int(s) for s in signs]

    win = {l: (max(1.0 + 0.5 * (a[l] - 1.0), a[l] * (1.0 - rel)), a[l] * (1.0 + rel)) for l in act}

    def a_of(l, inv_mu):
        g = lambda x: _cost_slope(channels[l], x, signs[l]) - inv_mu
        return brentq(g, *win[l], xtol=1e-15, rtol=4 * np.finfo(float).eps)

    def excess(inv_mu):
        return sum(float(channels[l].cost(a_of(l, inv_mu), signs[l])[0]) for l in act) \
            - (budget - sum(float(channels[l].cost(a[l], signs[l])[0])
                            for l in range(len(a)) if l not in act))

    # multipliers reachable by every channel inside its window
    ends = np.array([[_cost_slope(channels[l], x, signs[l]) for x in win[l]] for l in act])
    m_lo, m_hi = float(np.max(ends.min(axis=1))), float(np.min(ends.max(axis=1)))
    try:
        if not m_lo < m_hi:
            return a
        root = brentq(excess, m_lo, m_hi, xtol=1e-15 * m_hi, rtol=4 * np.finfo(float).eps)
        P = np.array([channels[l].V * (a_of(l, root) ** 2 - 1.0) for l in act])
        fixed = excess(root) - sum(float(channels[l].cost(a_of(l, root), signs[l])[0]) for l in act)

        def at(t):
            return np.sqrt(1.0 + t * P / np.array([channels[l].V for l in act]))

        # slope noise leaves a tiny spend error; rescale onto the budget exactly
        spend = lambda t: sum(float(channels[l].cost(x, signs[l])[0])
                              for l, x in zip(act, at(t))) + fixed
        t = brentq(spend, 1.0 - 1e-6, 1.0 + 1e-6, xtol=1e-16, rtol=4 * np.finfo(float).eps)
        out = a.copy()
        out[act] = at(t)
    except (ValueError, RuntimeError):
        return a
    if np.sum(np.log(out)) < np.sum(np.log(a)) - 1e-13:
        return a
    return out


def _finish(noise, a, signs, basis, budget, method, diagnostics) -> CapacityResult:
    P = basis.lam * (a * a - 1.0)
    design = build_design(noise, P, signs, basis=basis)
    err = abs(design.transmit_power - budget)
    diagnostics = dict(diagnostics)
    diagnostics["budget_error"] = err / budget
    if err > POW_TOL * budget:
        raise RuntimeError(f"design spends {design.transmit_power!r}, budget {budget!r}")
    return CapacityResult(lower_bound_bits=design.alloc.rate_bits, design=design,
                          budget=float(budget), method=method, diagnostics=diagnostics)


def _sign_sets(sign_policy: str, n: int):
    if sign_policy in ("+", "plus", "1", "+1"):
        return [[(1,) * n]], (1,)
    if sign_policy in ("-", "minus", "-1"):
        return [[(-1,) * n]], (-1,)
    if sign_policy in ("global", "auto"):
        return [[(1,) * n], [(-1,) * n]], (1, -1)
    if sign_policy == "per_channel":
        return None, (1, -1)
    raise ValueError(f"unknown sign policy {sign_policy!r}")


def solve_independent(noise: ArmaNoiseModel, budget: float,
                      sign_policy: str = "per_channel") -> CapacityResult:
    """Lower bound for a parallel of independent ARMA noises.

    All coefficient matrices and ``Vhat`` must be diagonal. Channel ``l``
    costs ``w_l(s a)(a^2 - 1) V_l`` with
    ``w_l(x) = ((1 + sum g_jl x^-j) / (1 - sum f_il x^-i))^2``.

    Parameters
    ----------
    sign_policy : {"per_channel", "global", "+", "-"}
        ``per_channel`` lets every channel pick its own branch; ``global``
        tries all-plus and all-minus and keeps the better.
    """
    _check_budget(budget)
    require_valid(noise)
    if not noise.is_diagonal:
        raise ValueError("solve_independent needs diagonal Vhat, F_i and G_j")
    V = np.diag(noise.Vhat).copy()
    basis = SymEig(U=np.eye(noise.n), lam=V)
    channels = [_Channel(lambda x, l=l: _diag_weight(noise, l, x), V[l]) for l in range(noise.n)]
    patterns, allowed = _sign_sets(sign_policy, noise.n)
    if patterns is None:
        a, signs, _ = _lagrangian(channels, budget, [allowed] * noise.n)
        tried = {"per_channel": float(np.sum(np.log2(a)))}
    else:
        best = None
        tried = {}
        for (pat,) in patterns:
            a_p, s_p, _ = _lagrangian(channels, budget, [[s] for s in pat])
            rate = float(np.sum(np.log2(a_p)))
            tried["+" if pat[0] > 0 else "-"] = rate
            if best is None or rate > best[0]:
                best = (rate, a_p, s_p)
        _, a, signs = best
    a = _kkt_polish(channels, a, signs, budget)
    return _finish(noise, a, signs, basis, budget, "independent_1d", {"sign_rates": tried})


class _RayProblem:
    """Rate along ``P = t d`` at the budget-exhausting scale ``t``."""

    def __init__(self, noise, basis, signs, budget):
        self.noise = noise
        self.V = basis.lam
        self.U = basis.U
        self.signs = np.asarray(signs, dtype=int)
        self.budget = budget
        self.weights = [RationalWeight(noise, basis.U[:, l]) for l in range(len(self.V))]
        self.evaluations = 0

    def cost(self, P) -> float:
        P = np.asarray(P, dtype=float)
        a = np.sqrt(1.0 + P / self.V)
        C = design_c_columns(self.noise, self.U, self.signs * a)
        CU = C @ self.U
        return float(np.sum(P * np.sum(CU * CU, axis=0)))

    def _ray_cost(self, d, t):
        t = np.atleast_1d(t)
        P = t[:, None] * d[None, :]
        a = np.sqrt(1.0 + P / self.V)
        total = np.zeros(t.shape)
        for l in range(len(d)):
            if d[l] == 0:
                continue
            w = self.weights[l](self.signs[l] * a[:, l])
            total += P[:, l] * w
        return total

    def scale(self, d) -> float:
        self.evaluations += 1
        return _largest_root(lambda t: self._ray_cost(d, t), self.budget, 0.0, self.budget / d.sum())

    def rate(self, d) -> tuple[float, np.ndarray]:
        t = self.scale(d)
        P = t * d
        return float(np.sum(np.log(np.sqrt(1.0 + P / self.V)))), P


def _coordinate_ascent(prob: _RayProblem, d0, step0: float = 0.25, step_min: float = 1e-10,
                       max_sweeps: int = 10_000):
    """Pairwise mass transfer on the simplex, halving the step on stalls."""
    d = np.asarray(d0, dtype=float) / np.sum(d0)
    best, P = prob.rate(d)
    n = len(d)
    step = step0
    sweeps = 0
    while step >= step_min and sweeps < max_sweeps and n > 1:
        improved = False
        for i in range(n):
            for j in range(n):
                if i == j or d[j] <= 0:
                    continue
                delta = min(step, d[j])
                trial = d.copy()
                trial[i] += delta
                trial[j] -= delta
                trial[trial < 1e-300] = 0.0
                val, P_t = prob.rate(trial)
                if val > best + 1e-15:
                    best, d, P = val, trial, P_t
                    improved = True
        sweeps += 1
        if not improved:
            step *= 0.5
    return best, d, P


def solve_general(noise: ArmaNoiseModel, budget: float, sign_policy: str = "global",
                  restarts: int = 0, seed: int = 0) -> CapacityResult:
    """Lower bound for arbitrary (jointly colored) ARMA noise.

    The problem is nonconvex; this is a multi-start local search whose result
    is always feasible (spends exactly ``budget``) and never worse than any
    of its starting points. Starts are the water-filling, uniform and
    single-channel allocations, the separable multiplier solution, and
    ``restarts`` random simplex points drawn from ``seed``.

    Parameters
    ----------
    sign_policy : {"global", "+", "-", "per_channel"}
        ``global`` uses one branch for every eigenchannel (both tried).
    """
    _check_budget(budget)
    require_valid(noise)
    basis = sym_eig(noise.Vhat)
    n = noise.n
    V = basis.lam
    weights = [RationalWeight(noise, basis.U[:, l]) for l in range(n)]
    channels = [_Channel(weights[l], V[l]) for l in range(n)]
    patterns, allowed = _sign_sets(sign_policy, n)
    if patterns is None:
        _, lag_signs, _ = _lagrangian(channels, budget, [allowed] * n)
        pats = {tuple(lag_signs), (1,) * n, (-1,) * n}
        patterns = [[p] for p in sorted(pats, reverse=True)]
    rng = np.random.default_rng(seed)
    wf = waterfill(V, budget).P
    start_dirs = [("waterfill", wf), ("uniform", np.ones(n))]
    start_dirs += [(f"spike{l}", np.eye(n)[l]) for l in range(n)]
    start_dirs += [(f"random{r}", rng.dirichlet(np.ones(n))) for r in range(restarts)]

    records = []
    coarse = []
    for (pat,) in patterns:
        prob = _RayProblem(noise, basis, pat, budget)
        lag_a, _, _ = _lagrangian(channels, budget, [[s] for s in pat])
        dirs = start_dirs + [("multiplier", V * (lag_a ** 2 - 1.0))]
        for label, d0 in dirs:
            d0 = np.asarray(d0, dtype=float)
            if not np.any(d0 > 0):
                continue
            start_val, _ = prob.rate(d0 / d0.sum())
            val, d, P = _coordinate_ascent(prob, d0, step_min=COARSE_STEP)
            records.append({"start": label, "signs": list(pat), "start_rate_bits": start_val / np.log(2),
                            "coarse_rate_bits": val / np.log(2)})
            coarse.append((val, tuple(-P), d, P, pat, prob))
    # polish the best few coarse optima; ties go to the smaller allocation
    coarse.sort(key=lambda c: (c[0], c[1]), reverse=True)
    best = None
    for val, _, d, P, pat, prob in coarse[:POLISH_TOP]:
        val, d, P = _coordinate_ascent(prob, d, step0=COARSE_STEP, step_min=FINE_STEP)
        key = (val, tuple(-P))
        if best is None or key > best[0]:
            best = (key, P, pat)
    _, P, pat = best
    a = _kkt_polish(channels, np.sqrt(1.0 + P / V), pat, budget)
    start_best = max(r["start_rate_bits"] for r in records)
    diagnostics = {
        "starts": records,
        "best_start_rate_bits": start_best,
        "improved_over_starts": float(np.sum(np.log2(a))) > start_best + 1e-12,
    }
    return _finish(noise, a, np.asarray(pat), basis, budget, "general_search", diagnostics)


def scalar_bound(f: Sequence[float], g: Sequence[float], var: float, budget: float,
                 sign_policy: str = "global") -> CapacityResult:
    """Single-channel bound: the largest ``a`` with cost ``w(+-a)(a^2-1) var = budget``.

    The rate is ``log2 a`` for the better branch.
    """
    _check_budget(budget)
    noise = ArmaNoiseModel.scalar(f, g, var)
    require_valid(noise)
    ch = _Channel(lambda x: _diag_weight(noise, 0, x), var)
    _, allowed = _sign_sets(sign_policy if sign_policy != "per_channel" else "global", 1)
    caps = {s: _a_cap(ch, s, budget) for s in allowed}
    s_best = max(caps, key=lambda s: (caps[s], s))
    basis = SymEig(U=np.eye(1), lam=np.array([float(var)]))
    diag = {"a_by_sign": {("+" if s > 0 else "-"): caps[s] for s in caps}}
    return _finish(noise, np.array([caps[s_best]]), np.array([s_best]), basis, budget,
                   "independent_1d", diag)


def solve(noise: ArmaNoiseModel, budget: float, sign_policy: str = "auto",
          restarts: int = 0, seed: int = 0) -> CapacityResult:
    """Route to the cheapest exact method for the noise structure.

    White noise goes to water-filling, diagonal models to
    :func:`solve_independent`, the rest to :func:`solve_general`.
    """
    _check_budget(budget)
    require_valid(noise)
    if noise.is_white:
        basis = sym_eig(noise.Vhat)
        sign = -1 if sign_policy in ("-", "minus", "-1") else 1
        alloc = waterfill(basis.lam, budget, sign)
        design = build_design(noise, alloc.P, sign, basis=basis)
        return CapacityResult(lower_bound_bits=alloc.rate_bits, design=design, budget=float(budget),
                              method="waterfill", diagnostics={"water_level": alloc.water_level})
    if noise.is_diagonal:
        policy = "per_channel" if sign_policy == "auto" else sign_policy
        return solve_independent(noise, budget, policy)
    policy = "global" if sign_policy == "auto" else sign_policy
    return solve_general(noise, budget, policy, restarts=restarts, seed=seed)
