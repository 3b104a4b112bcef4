"""Compiled forward/backward passes over the flat parameter layout.

Everything here takes plain arrays so the sampler can call it from nopython
code. ``widths`` is an int64 array of layer widths; ``act`` is 0 for tanh and
1 for relu. Activations are stored unit-major, one row of ``N`` values per
neuron.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
TANH, RELU = 0, 1


@nb.njit(cache=True)
def _offsets(widths):
    n = widths.shape[0]
    w_off = np.empty(n - 1, dtype=np.int64)
    b_off = np.empty(n - 1, dtype=np.int64)
    u_off = np.empty(n, dtype=np.int64)
    pos = 0
    for k in range(1, n):
        w_off[k - 1] = pos
        pos += widths[k] * widths[k - 1]
    for k in range(1, n):
        b_off[k - 1] = pos
        pos += widths[k]
    upos = 0
    for k in range(n):
        u_off[k] = upos
        upos += widths[k]
    return w_off, b_off, u_off, pos, upos


@nb.njit(cache=True, fastmath={'contract', 'arcp', 'nsz', 'reassoc'})
def sse_and_grad(theta, XT, Y, widths, act):
    """Sum of squared residuals and its gradient with respect to ``theta``.

    ``XT`` is the transposed design matrix ``(n, N)`` so the inner loops run
    over data points with unit stride.
    """
    w_off, b_off, u_off, d, n_units = _offsets(widths)
    L = widths.shape[0]
    N = XT.shape[1]
    m = widths[L - 1]
    Z = np.empty((n_units, N))
    Dl = np.empty((n_units, N))
    grad = np.zeros(d)
    for j in range(widths[0]):
        Z[j, :] = XT[j, :]
    for k in range(1, L):
        rows = widths[k]; cols = widths[k - 1]; wo = w_off[k - 1]
        for i in range(rows):
            zi = Z[u_off[k] + i]
            b = theta[b_off[k - 1] + i]
            for n in range(N):
                zi[n] = b
            for j in range(cols):
                w = theta[wo + i * cols + j]
                zj = Z[u_off[k - 1] + j]
                for n in range(N):
                    zi[n] += w * zj[n]
            if k < L - 1:
                if act == 0:
                    for n in range(N):
                        zi[n] = math.tanh(zi[n])
                else:
                    for n in range(N):
                        zi[n] = max(zi[n], 0.0)
    out = u_off[L - 1]
    sse = 0.0
    for i in range(m):
        zi = Z[out + i]; di = Dl[out + i]
        for n in range(N):
            r = zi[n] - Y[n, i]
            sse += r * r
            di[n] = 2.0 * r
    for k in range(L - 1, 0, -1):
        rows = widths[k]; cols = widths[k - 1]; wo = w_off[k - 1]
        if k < L - 1:
            for i in range(rows):
                zi = Z[u_off[k] + i]; di = Dl[u_off[k] + i]
                if act == 0:
                    for n in range(N):
                        di[n] *= 1.0 - zi[n] * zi[n]
                else:
                    for n in range(N):
                        if zi[n] <= 0.0:
                            di[n] = 0.0
        if k > 1:
            for j in range(cols):
                Dl[u_off[k - 1] + j, :] = 0.0
        for i in range(rows):
            di = Dl[u_off[k] + i]
            s = 0.0
            for n in range(N):
                s += di[n]
            grad[b_off[k - 1] + i] += s
            for j in range(cols):
                zj = Z[u_off[k - 1] + j]
                s = 0.0
                for n in range(N):
                    s += di[n] * zj[n]
                grad[wo + i * cols + j] += s
                if k > 1:
                    w = theta[wo + i * cols + j]
                    dj = Dl[u_off[k - 1] + j]
                    for n in range(N):
                        dj[n] += di[n] * w
    return sse, grad


@nb.njit(cache=True)
def log_prior_and_grad(q):
    """Standard normal on theta, half-normal on sigma = exp(q[-1]) with Jacobian."""
    d = q.shape[0] - 1
    grad = np.empty_like(q)
    lp = -0.5 * d * LOG_2PI
    for i in range(d):
        lp -= 0.5 * q[i] * q[i]
        grad[i] = -q[i]
    log_sigma = q[d]
    sigma2 = math.exp(2.0 * log_sigma)
    lp += math.log(2.0) - 0.5 * LOG_2PI - 0.5 * sigma2 + log_sigma
    grad[d] = 1.0 - sigma2
    return lp, grad


@nb.njit(cache=True)
def log_posterior_and_grad(q, args):
    """Unnormalized log posterior over ``q = (theta, log_sigma)``.

    ``args`` is ``(XT, Y, widths, act)``.
    """
    XT, Y, widths, act = args
    d = q.shape[0] - 1
    lp, grad = log_prior_and_grad(q)
    N = Y.shape[0]
    if N == 0:
        return lp, grad
    m = Y.shape[1]
    sse, g_sse = sse_and_grad(q[:d], XT, Y, widths, act)
    log_sigma = q[d]
    inv_s2 = math.exp(-2.0 * log_sigma)
    nm = N * m
    lp += -0.5 * nm * LOG_2PI - nm * log_sigma - 0.5 * sse * inv_s2
    for i in range(d):
        grad[i] -= 0.5 * inv_s2 * g_sse[i]
    grad[d] += -nm + sse * inv_s2
    return lp, grad
