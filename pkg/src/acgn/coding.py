"""Recursive feedback coding: synthesis, simulation and verification.

The encoder holds a copy ``xt`` of the decoder's estimation error and sends
``-y'_k = -C xt_k``; the channel returns ``e'_k = -y'_k + v_k``. Two
controller realizations are provided.

``"innovation"`` (default)
    The encoder knows ``y'_k`` and so recovers ``v_k = e'_k + y'_k``; it
    whitens that through ``F^-1(z)`` into ``vhat_k`` and drives
    ``xt_{k+1} = A xt_k + Khat (vhat_k - xt_k)``. The error then follows the
    Kalman recursion exactly: its stationary covariance is ``P`` and the
    transmit power is ``tr(C P C^T)``.

``"literal"``
    ``u_k = Khat (e'_k - sum F_i e'_{k-i}) - sum G_j u_{k-j}``, i.e. the
    gain ``K(z) = (I + sum G_j z^-j)^-1 Khat (I - sum F_i z^-i)`` applied to the
    channel output. It coincides with the innovation form for white noise,
    but for colored noise it neither attains ``tr(C P C^T)`` nor is it
    guaranteed to be stable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from . import _kernels
from .capacity import CapacityResult, ChannelDesign
from .kalman import compute_chat, eig_pair
from .linalg import spectral_radius
from .noise import ArmaNoiseModel, sample_path

__all__ = [
    "CONTROLLERS",
    "QUAD_TOL",
    "MC_TOL",
    "MC_MIN_STEPS",
    "OVERFLOW_GUARD",
    "DEFAULT_NODES",
    "UnstableLoop",
    "QuadratureError",
    "CodingScheme",
    "SimulationReport",
    "Check",
    "VerificationRecord",
    "synthesize",
    "simulate",
    "spectral_rate",
    "stationary_moments",
    "mc_tolerance",
    "sim_burn_in",
    "verify_design",
]

log = logging.getLogger(__name__)

CONTROLLERS = ("innovation", "literal")
QUAD_TOL = 1e-6
MC_TOL = 0.02
MC_REF_STEPS = 1_000_000
MC_MIN_STEPS = 10_000
OVERFLOW_GUARD = 1e9
DEFAULT_NODES = 4096
MAX_NODES = 1 << 18
LIVE_TOL = 1e-12


class UnstableLoop(RuntimeError):
    """The closed loop diverged or is not asymptotically stable."""


class QuadratureError(RuntimeError):
    """Node doubling did not settle within the node cap."""


@dataclass(frozen=True)
class CodingScheme:
    """Encoder for one channel design.

    ``live`` marks eigenchannels that carry power or feedback gain; the
    remaining ones have ``|lambda| = 1`` but are unreachable from the
    noise, so they are dropped from the closed-loop coordinates.
    """

    design: ChannelDesign
    F: tuple
    G: tuple
    n: int
    controller: str = "innovation"
    live: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if self.live is None:
            d = self.design
            kn = np.linalg.norm(d.Khat)
            row = np.linalg.norm(d.U.T @ d.Khat, axis=1)
            live = (d.alloc.P > 0) | (row > LIVE_TOL * max(kn, np.finfo(float).tiny))
            object.__setattr__(self, "live", live)

    @property
    def p(self) -> int:
        return len(self.F)

    @property
    def q(self) -> int:
        return len(self.G)

    @property
    def basis(self) -> np.ndarray:
        """Columns spanning the closed-loop part of the error state."""
        if self.controller == "literal" and self.q > 0:
            return np.eye(self.n)
        return self.design.U[:, self.live]

    def closed_loop_matrix(self) -> np.ndarray:
        """State matrix of the noise-free loop (error state plus controller memory)."""
        model = _LoopModel(self, None)
        return model.matrices()[0]

    @property
    def spectral_radius(self) -> float:
        return spectral_radius(self.closed_loop_matrix())


def synthesize(result: CapacityResult, noise: ArmaNoiseModel, controller: str = "innovation",
               check: bool = True) -> CodingScheme:
    """Package a capacity design as a coding scheme.

    Raises
    ------
    UnstableLoop
        If ``check`` and the closed loop has spectral radius >= 1.
    """
    design = result.design if isinstance(result, CapacityResult) else result
    if design.A.shape != (noise.n, noise.n):
        raise ValueError("design and noise model dimensions differ")
    scheme = CodingScheme(design=design, F=noise.F, G=noise.G, n=noise.n, controller=controller)
    if check:
        rho = scheme.spectral_radius
        if not rho < 1.0:
            raise UnstableLoop(f"closed loop is not stable (spectral radius {rho:.6g})")
    return scheme


class _LoopModel:
    """Linear step map of the loop, used for matrices and as a reference simulator.

    State layout: error state in ``basis`` coordinates, controller memory
    (``p`` then ``q`` blocks of ``n``), then noise-generator memory
    (``v_{k-1..k-p}``, ``vhat_{k-1..k-q}``) when a noise model is given.
    """

    def __init__(self, scheme: CodingScheme, noise: ArmaNoiseModel | None):
        self.s = scheme
        self.Q = scheme.basis
        self.m = self.Q.shape[1]
        self.n = scheme.n
        self.p, self.q = scheme.p, scheme.q
        self.with_noise = noise is not None
        self.ctrl_dim = self.m + self.n * (self.p + self.q)
        self.dim = self.ctrl_dim + (self.n * (self.p + self.q) if self.with_noise else 0)

    def _split(self, z):
        n, p, q, m = self.n, self.p, self.q, self.m
        xc = z[:m]
        ha = z[m:m + n * p].reshape(p, n)
        hb = z[m + n * p:self.ctrl_dim].reshape(q, n)
        if self.with_noise:
            off = self.ctrl_dim
            nv = z[off:off + n * p].reshape(p, n)
            nh = z[off + n * p:].reshape(q, n)
        else:
            nv = np.zeros((p, n))
            nh = np.zeros((q, n))
        return xc, ha, hb, nv, nh

    def step(self, z, vhat):
        """Return ``(z_next, y, e)`` for innovation sample ``vhat``."""
        d, F, G, Q = self.s.design, self.s.F, self.s.G, self.Q
        xc, ha, hb, nv, nh = self._split(z)
        v = vhat.copy()
        for i in range(self.p):
            v = v + F[i] @ nv[i]
        for j in range(self.q):
            v = v + G[j] @ nh[j]
        x = Q @ xc
        y = d.C @ x
        e = v - y
        if self.s.controller == "innovation":
            vk = e + y
            w = vk.copy()
            for i in range(self.p):
                w -= F[i] @ ha[i]
            for j in range(self.q):
                w -= G[j] @ hb[j]
            u = d.Khat @ (w - x)
            new_a, new_b = vk, w
        else:
            w = e.copy()
            for i in range(self.p):
                w -= F[i] @ ha[i]
            u = d.Khat @ w
            for j in range(self.q):
                u -= G[j] @ hb[j]
            new_a, new_b = e, u
        xn = Q.T @ (d.A @ x + u)
        parts = [xn, np.concatenate(([new_a], ha[:-1])).ravel() if self.p else np.zeros(0),
                 np.concatenate(([new_b], hb[:-1])).ravel() if self.q else np.zeros(0)]
        if self.with_noise:
            parts.append(np.concatenate(([v], nv[:-1])).ravel() if self.p else np.zeros(0))
            parts.append(np.concatenate(([vhat], nh[:-1])).ravel() if self.q else np.zeros(0))
        return np.concatenate(parts), y, e

    def matrices(self):
        """``(M, N)`` with ``z_next = M z + N vhat``, by probing the linear step."""
        M = np.zeros((self.dim, self.dim))
        N = np.zeros((self.dim, self.n))
        zero = np.zeros(self.n)
        for i in range(self.dim):
            z = np.zeros(self.dim)
            z[i] = 1.0
            M[:, i] = self.step(z, zero)[0]
        for j in range(self.n):
            N[:, j] = self.step(np.zeros(self.dim), np.eye(self.n)[j])[0]
        if not self.with_noise:
            M = M[:self.ctrl_dim, :self.ctrl_dim]
        return M, N

    def run(self, vhat):
        """Pure-Python loop over an innovation path; returns ``(y, e)``."""
        z = np.zeros(self.dim)
        ys, es = [], []
        for k in range(vhat.shape[0]):
            z, y, e = self.step(z, vhat[k])
            ys.append(y)
            es.append(e)
        return np.array(ys), np.array(es)


def stationary_moments(scheme: CodingScheme, noise: ArmaNoiseModel):
    """Exact stationary transmit power and error covariance via a Lyapunov solve.

    Returns
    -------
    power : float
        ``E ||y'_k||^2``.
    cov : (n, n) array
        ``E xt xt^T``.
    """
    model = _LoopModel(scheme, noise)
    M, N = model.matrices()
    if not spectral_radius(M) < 1.0:
        raise UnstableLoop("closed loop has no stationary distribution")
    S = solve_discrete_lyapunov(M, N @ noise.Vhat @ N.T)
    Q = model.Q
    Sxx = S[:model.m, :model.m]
    cov = Q @ Sxx @ Q.T
    cov = 0.5 * (cov + cov.T)
    power = float(np.trace(scheme.design.C @ cov @ scheme.design.C.T))
    return power, cov


@dataclass(frozen=True)
class SimulationReport:
    steps: int
    burn_in: int
    seed: int
    controller: str
    empirical_power: float
    predicted_power: float
    empirical_error_cov: np.ndarray
    predicted_error_cov: np.ndarray
    power_rel_err: float
    cov_rel_err: float
    window_powers: tuple
    y: np.ndarray | None = None
    e: np.ndarray | None = None

    @property
    def window_rel_diff(self) -> float:
        a, b = self.window_powers
        return abs(a - b) / max(0.5 * (a + b), np.finfo(float).tiny)


def sim_burn_in(noise: ArmaNoiseModel) -> int:
    return max(1000, 50 * noise.order)


def simulate(scheme: CodingScheme, noise: ArmaNoiseModel, T: int, seed: int,
             record: bool = False, guard: float = OVERFLOW_GUARD) -> SimulationReport:
    """Run the closed loop for ``T`` steps over ``sample_path(noise, T, seed)``.

    Statistics use steps ``k >= burn_in``. All controller memories start at
    zero. The result is deterministic in ``(scheme, noise, T, seed)``.

    Raises
    ------
    UnstableLoop
        When any state entry exceeds ``guard`` in magnitude.
    """
    burn = sim_burn_in(noise)
    T = int(T)
    if T <= burn:
        raise ValueError(f"T={T} must exceed the burn-in of {burn} steps")
    v, _ = sample_path(noise, T, seed)
    d = scheme.design
    n = noise.n
    rec_rows = T if record else 0
    y_rec = np.zeros((rec_rows, n))
    e_rec = np.zeros((rec_rows, n))
    mode = _kernels.INNOVATION if scheme.controller == "innovation" else _kernels.LITERAL
    status, psum, xx, w1, w2 = _kernels.closed_loop(
        mode, np.ascontiguousarray(d.A), np.ascontiguousarray(d.C), np.ascontiguousarray(d.Khat),
        noise.F_stack(), noise.G_stack(), np.ascontiguousarray(v), burn, float(guard), y_rec, e_rec)
    if status >= 0:
        raise UnstableLoop(f"state exceeded {guard:g} at step {status}")
    cnt = T - burn
    half = cnt // 2
    power = psum / cnt
    cov = xx / cnt
    cov = 0.5 * (cov + cov.T)
    pred = d.transmit_power
    perr = abs(power - pred) / pred if pred > 0 else abs(power)
    pn = np.linalg.norm(d.P)
    cerr = np.linalg.norm(cov - d.P) / pn if pn > 0 else np.linalg.norm(cov)
    return SimulationReport(
        steps=T, burn_in=burn, seed=int(seed), controller=scheme.controller,
        empirical_power=float(power), predicted_power=float(pred),
        empirical_error_cov=cov, predicted_error_cov=d.P.copy(),
        power_rel_err=float(perr), cov_rel_err=float(cerr),
        window_powers=(w1 / half, w2 / (cnt - half)),
        y=y_rec if record else None, e=e_rec if record else None)


def _log2_abs_det_sensitivity(scheme: CodingScheme, noise: ArmaNoiseModel, z) -> np.ndarray:
    d = scheme.design
    Q = scheme.basis
    m = Q.shape[1]
    n = scheme.n
    eye_m = np.eye(m)
    if scheme.controller == "innovation":
        Ac = Q.T @ (d.A - d.Khat) @ Q
        rhs = (Q.T @ d.Khat) @ noise.inverse_filter(z)
        X = np.linalg.solve(z[:, None, None] * eye_m - Ac, rhs)
        S = np.eye(n) - (d.C @ Q) @ X
        _, ld = np.linalg.slogdet(S)
        return ld / math.log(2.0)
    Ar = Q.T @ d.A @ Q
    gain = np.linalg.solve(noise.ma_poly(z), d.Khat @ noise.ar_poly(z))
    X = np.linalg.solve(z[:, None, None] * eye_m - Ar, Q.T @ gain)
    _, ld = np.linalg.slogdet(np.eye(n) + (d.C @ Q) @ X)
    return -ld / math.log(2.0)


def spectral_rate(scheme: CodingScheme, noise: ArmaNoiseModel, nodes: int = DEFAULT_NODES,
                  quad_tol: float = QUAD_TOL, max_nodes: int = MAX_NODES) -> float:
    """Average of ``log2 |det S(e^jw)|`` over the unit circle, in bits per use.

    ``S`` is the closed-loop map from the noise ``v`` to the channel output
    ``e'``. For a stable loop the average is the sum of ``log2 |z|`` over the
    zeros of ``det S`` outside the unit circle. Every ``lambda`` is such a
    zero, so the result is at least ``sum log2 |lambda|``; with colored noise
    the whitening part of the controller can add further zeros, and the
    ``rate`` check of :func:`verify_design` then fails. The integrand is
    smooth and periodic, so
    the uniform trapezoid rule (mean over equispaced nodes) is used with
    node doubling until two successive estimates differ by at most
    ``quad_tol``.
    """
    if nodes < 2:
        raise ValueError("need at least 2 nodes")
    N = int(nodes)
    prev = None
    while N <= max_nodes:
        w = -np.pi + 2.0 * np.pi * np.arange(N) / N
        vals = _log2_abs_det_sensitivity(scheme, noise, np.exp(1j * w))
        if not np.all(np.isfinite(vals)):
            raise QuadratureError("sensitivity is singular on the unit circle")
        cur = float(np.mean(vals))
        half = float(np.mean(vals[::2]))
        if abs(cur - half) <= quad_tol:
            return cur
        if prev is not None and abs(cur - prev) <= quad_tol:
            return cur
        prev = cur
        N *= 2
    raise QuadratureError(f"rate quadrature did not settle within {max_nodes} nodes")


def mc_tolerance(T: int) -> float | None:
    """Relative Monte Carlo tolerance for ``T`` steps, or None when too short to judge."""
    if T < MC_MIN_STEPS:
        return None
    return MC_TOL * math.sqrt(MC_REF_STEPS / T)


@dataclass(frozen=True)
class Check:
    name: str
    status: str  # "pass", "fail" or "inconclusive"
    value: float
    tol: float | None
    detail: str = ""


@dataclass(frozen=True)
class VerificationRecord:
    checks: tuple
    spectral_radius: float
    rate_bits: float
    spectral_rate_bits: float | None
    simulation: SimulationReport | None
    mc_tol: float | None

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    @property
    def n_pass(self) -> int:
        return sum(c.status == "pass" for c in self.checks)

    @property
    def failed(self) -> list[str]:
        return [c.name for c in self.checks if c.status == "fail"]

    @property
    def inconclusive(self) -> list[str]:
        return [c.name for c in self.checks if c.status == "inconclusive"]


def _norm_inf(m) -> float:
    return float(np.max(np.sum(np.abs(m), axis=1)))


def verify_design(result, noise: ArmaNoiseModel, T: int = MC_REF_STEPS, seed: int = 0,
                  nodes: int = DEFAULT_NODES, controller: str = "innovation",
                  record: bool = False) -> VerificationRecord:
    """Run six consistency checks on a design; failures are recorded, never raised.

    1. ``are``: ``P`` solves the whitened Riccati equation and ``Khat`` equals
       ``A P (P + Vhat)^-1``.
    2. ``chat``: whitening ``C`` through ``A`` gives the identity.
    3. ``stability``: closed-loop spectral radius below 1.
    4. ``rate``: the spectral rate equals ``sum log2 |lambda|``.
    5. ``power``: simulated power matches the budget within the Monte Carlo
       tolerance.
    6. ``covariance``: simulated error covariance matches ``P``.

    Checks 5 and 6 are ``inconclusive`` when ``T`` is below
    :data:`MC_MIN_STEPS`.
    """
    design: ChannelDesign = result.design if isinstance(result, CapacityResult) else result
    budget = result.budget if isinstance(result, CapacityResult) else design.transmit_power
    checks = []
    A, C, P, K, V = design.A, design.C, design.P, design.Khat, noise.Vhat
    scale = 1.0 + _norm_inf(P)

    try:
        r = P - A @ P @ A.T + A @ P @ np.linalg.solve(P + V, P @ A.T)
        res = _norm_inf(r) / scale
        gain_err = _norm_inf(K - A @ P @ np.linalg.inv(P + V)) / (1.0 + _norm_inf(K))
        ok = res <= 1e-9 and gain_err <= 1e-9
        checks.append(Check("are", "pass" if ok else "fail", max(res, gain_err), 1e-9,
                            f"residual {res:.3e}, gain mismatch {gain_err:.3e}"))
    except np.linalg.LinAlgError as exc:
        checks.append(Check("are", "fail", math.inf, 1e-9, str(exc)))

    try:
        err = float(np.max(np.abs(compute_chat(eig_pair(A), C, noise) - np.eye(noise.n))))
        checks.append(Check("chat", "pass" if err <= 1e-9 else "fail", err, 1e-9))
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        checks.append(Check("chat", "fail", math.inf, 1e-9, str(exc)))

    scheme = synthesize(design, noise, controller=controller, check=False)
    rho = scheme.spectral_radius
    stable = rho < 1.0
    checks.append(Check("stability", "pass" if stable else "fail", rho, 1.0))

    rate = design.alloc.rate_bits
    srate = None
    if stable:
        try:
            srate = spectral_rate(scheme, noise, nodes=nodes)
            err = abs(srate - rate)
            checks.append(Check("rate", "pass" if err <= QUAD_TOL else "fail", err, QUAD_TOL,
                                f"spectral {srate:.9f} vs {rate:.9f} bits"))
        except QuadratureError as exc:
            checks.append(Check("rate", "fail", math.inf, QUAD_TOL, str(exc)))
    else:
        checks.append(Check("rate", "fail", math.inf, QUAD_TOL, "loop unstable"))

    tol = mc_tolerance(T)
    sim = None
    if not stable:
        for name in ("power", "covariance"):
            checks.append(Check(name, "fail", math.inf, tol, "loop unstable"))
    elif T <= sim_burn_in(noise):
        for name in ("power", "covariance"):
            checks.append(Check(name, "inconclusive", math.nan, tol, f"T={T} too short"))
    else:
        try:
            sim = simulate(scheme, noise, T, seed, record=record)
        except UnstableLoop as exc:
            for name in ("power", "covariance"):
                checks.append(Check(name, "fail", math.inf, tol, str(exc)))
        else:
            perr = abs(sim.empirical_power - budget) / budget
            for name, val in (("power", perr), ("covariance", sim.cov_rel_err)):
                if tol is None:
                    status = "inconclusive"
                else:
                    status = "pass" if val <= tol else "fail"
                checks.append(Check(name, status, val, tol))
    return VerificationRecord(checks=tuple(checks), spectral_radius=rho, rate_bits=rate,
                              spectral_rate_bits=srate, simulation=sim, mc_tol=tol)
