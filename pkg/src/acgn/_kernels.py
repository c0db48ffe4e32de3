"""Compiled inner loops for long time-domain recursions.

Everything here works on contiguous float64 arrays with zero initial
conditions. Higher-level validation lives in :mod:`acgn.noise` and
:mod:`acgn.coding`.
"""

import numpy as np
from numba import njit

INNOVATION = 0
LITERAL = 1


@njit(cache=True)
def _matvec_acc(out, M, x, sign):
    n, m = M.shape
    for r in range(n):
        s = 0.0
        for c in range(m):
            s += M[r, c] * x[c]
        out[r] += sign * s


@njit(cache=True)
def arma_filter(ar, ma, x):
    """out_k = sum_i ar[i-1] out_{k-i} + x_k + sum_j ma[j-1] x_{k-j}."""
    T, n = x.shape
    na = ar.shape[0]
    nb = ma.shape[0]
    out = np.zeros((T, n))
    for k in range(T):
        for r in range(n):
            out[k, r] = x[k, r]
        for i in range(1, min(na, k) + 1):
            _matvec_acc(out[k], ar[i - 1], out[k - i], 1.0)
        for j in range(1, min(nb, k) + 1):
            _matvec_acc(out[k], ma[j - 1], x[k - j], 1.0)
    return out


@njit(cache=True)
def closed_loop(mode, A, C, K, F, G, v, burn_in, guard, y_rec, e_rec):
    """Run the feedback coding loop over the noise path ``v``.

    Returns ``(status, power_sum, xx_sum, win1, win2)`` where ``status`` is
    -1 on success or the step at which the state norm exceeded ``guard``.
    ``y_rec``/``e_rec`` are filled when they have ``T`` rows.
    """
    T, n = v.shape
    p = F.shape[0]
    q = G.shape[0]
    record = y_rec.shape[0] == T
    x = np.zeros(n)
    y = np.zeros(n)
    e = np.zeros(n)
    w = np.zeros(n)
    u = np.zeros(n)
    # innovation mode: hist_a holds reconstructed noise, hist_b whitened noise
    # literal mode: hist_a holds past channel outputs, hist_b past controls
    hist_a = np.zeros((max(p, 1), n))
    hist_b = np.zeros((max(q, 1), n))
    power_sum = 0.0
    xx_sum = np.zeros((n, n))
    half = burn_in + (T - burn_in) // 2
    win1 = 0.0
    win2 = 0.0
    for k in range(T):
        for r in range(n):
            y[r] = 0.0
        _matvec_acc(y, C, x, 1.0)
        for r in range(n):
            e[r] = -y[r] + v[k, r]
        if record:
            for r in range(n):
                y_rec[k, r] = y[r]
                e_rec[k, r] = e[r]
        if k >= burn_in:
            pw = 0.0
            for r in range(n):
                pw += y[r] * y[r]
            power_sum += pw
            if k < half:
                win1 += pw
            else:
                win2 += pw
            for r in range(n):
                for c in range(n):
                    xx_sum[r, c] += x[r] * x[c]

        for r in range(n):
            u[r] = 0.0
        if mode == INNOVATION:
            # the encoder knows y'_k, so v_k = e'_k + y'_k is recoverable
            vk = np.empty(n)
            for r in range(n):
                vk[r] = e[r] + y[r]
            for r in range(n):
                w[r] = vk[r]
            for i in range(1, min(p, k) + 1):
                _matvec_acc(w, F[i - 1], hist_a[i - 1], -1.0)
            for j in range(1, min(q, k) + 1):
                _matvec_acc(w, G[j - 1], hist_b[j - 1], -1.0)
            e_hat = w - x
            _matvec_acc(u, K, e_hat, 1.0)
            for i in range(p - 1, 0, -1):
                hist_a[i] = hist_a[i - 1]
            if p > 0:
                hist_a[0] = vk
            for j in range(q - 1, 0, -1):
                hist_b[j] = hist_b[j - 1]
            if q > 0:
                hist_b[0] = w.copy()
        else:
            for r in range(n):
                w[r] = e[r]
            for i in range(1, min(p, k) + 1):
                _matvec_acc(w, F[i - 1], hist_a[i - 1], -1.0)
            _matvec_acc(u, K, w, 1.0)
            for j in range(1, min(q, k) + 1):
                _matvec_acc(u, G[j - 1], hist_b[j - 1], -1.0)
            for i in range(p - 1, 0, -1):
                hist_a[i] = hist_a[i - 1]
            if p > 0:
                hist_a[0] = e.copy()
            for j in range(q - 1, 0, -1):
                hist_b[j] = hist_b[j - 1]
            if q > 0:
                hist_b[0] = u.copy()

        xn = u.copy()
        _matvec_acc(xn, A, x, 1.0)
        big = 0.0
        for r in range(n):
            x[r] = xn[r]
            if abs(xn[r]) > big:
                big = abs(xn[r])
        if not (big <= guard):
            return k, power_sum, xx_sum, win1, win2
    return -1, power_sum, xx_sum, win1, win2
