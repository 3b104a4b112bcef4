"""Compiled No-U-Turn sampler with warmup adaptation.

The log density is passed in as a jitted function ``logp_grad(q, args)``
returning ``(logp, grad)``. Trajectories are built by iterative doubling with
multinomial sampling; sub-tree U-turn checks are done with per-level
checkpoints instead of recursion.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

# dual averaging constants
GAMMA = 0.05
T0 = 10.0
KAPPA = 0.75
MAX_DELTA_H = 1000.0

STATUS_OK = 0
STATUS_BAD_INIT = 1


@nb.njit(cache=False)
def _kinetic(p, inv_mass):
    s = 0.0
    for i in range(p.shape[0]):
        s += inv_mass[i] * p[i] * p[i]
    return 0.5 * s


@nb.njit(cache=False)
def _draw_momentum(inv_mass):
    p = np.empty(inv_mass.shape[0])
    for i in range(p.shape[0]):
        p[i] = np.random.standard_normal() / math.sqrt(inv_mass[i])
    return p


@nb.njit(cache=False)
def _leapfrog(logp_grad, args, q, p, g, eps, inv_mass):
    p_half = p + 0.5 * eps * g
    q_new = q + eps * inv_mass * p_half
    lp_new, g_new = logp_grad(q_new, args)
    p_new = p_half + 0.5 * eps * g_new
    return q_new, p_new, g_new, lp_new


@nb.njit(cache=False)
def _is_turning(p_sharp_a, p_sharp_b, rho):
    return np.dot(p_sharp_a, rho) <= 0.0 or np.dot(p_sharp_b, rho) <= 0.0


@nb.njit(cache=False)
def _finite(lp, g):
    if not math.isfinite(lp):
        return False
    for i in range(g.shape[0]):
        if not math.isfinite(g[i]):
            return False
    return True


@nb.njit(cache=False)
def _reasonable_step_size(logp_grad, args, q, lp, g, eps, inv_mass):
    p = _draw_momentum(inv_mass)
    h0 = -lp + _kinetic(p, inv_mass)
    q1, p1, g1, lp1 = _leapfrog(logp_grad, args, q, p, g, eps, inv_mass)
    h1 = -lp1 + _kinetic(p1, inv_mass) if _finite(lp1, g1) else np.inf
    direction = 1.0 if h0 - h1 > math.log(0.5) else -1.0
    for _ in range(100):
        q1, p1, g1, lp1 = _leapfrog(logp_grad, args, q, p, g, eps, inv_mass)
        h1 = -lp1 + _kinetic(p1, inv_mass) if _finite(lp1, g1) else np.inf
        if direction > 0 and not (h0 - h1 > math.log(0.5)):
            break
        if direction < 0 and not (h0 - h1 < math.log(0.5)):
            break
        eps = eps * 2.0 if direction > 0 else eps * 0.5
        if eps > 1e7 or eps < 1e-10:
            break
    return eps


@nb.njit(cache=False)
def _transition(logp_grad, args, q0, lp0, g0, eps, inv_mass, max_depth):
    """One NUTS transition; returns the new state and per-transition statistics."""
    D = q0.shape[0]
    p0 = _draw_momentum(inv_mass)
    h0 = -lp0 + _kinetic(p0, inv_mass)

    q_left, p_left, g_left = q0.copy(), p0.copy(), g0.copy()
    q_right, p_right, g_right = q0.copy(), p0.copy(), g0.copy()
    q_prop, lp_prop, g_prop = q0.copy(), lp0, g0.copy()
    rho = p0.copy()
    log_w = 0.0

    accept_sum = 0.0
    n_leaf = 0
    divergent = False
    depth = 0

    ckpt_p = np.empty((max_depth + 1, D))
    ckpt_rho = np.empty((max_depth + 1, D))

    for j in range(max_depth):
        depth = j + 1
        direction = 1.0 if np.random.random() < 0.5 else -1.0
        if direction > 0:
            q, p, g = q_right.copy(), p_right.copy(), g_right.copy()
        else:
            q, p, g = q_left.copy(), p_left.copy(), g_left.copy()
        lp = 0.0
        n_sub = 1 << j
        sub_log_w = -np.inf
        sub_q, sub_lp, sub_g = q0, lp0, g0
        sub_rho = np.zeros(D)
        sub_ok = True
        for n in range(n_sub):
            q, p, g, lp = _leapfrog(logp_grad, args, q, p, g, direction * eps, inv_mass)
            if _finite(lp, g):
                h = -lp + _kinetic(p, inv_mass)
            else:
                h = np.inf
            delta = h - h0
            if not (delta <= MAX_DELTA_H):
                divergent = True
                sub_ok = False
                n_leaf += 1
                break
            accept_sum += min(1.0, math.exp(-delta))
            n_leaf += 1
            lw = -delta
            if lw > sub_log_w:
                sub_log_w_new = lw + math.log1p(math.exp(sub_log_w - lw))
            else:
                sub_log_w_new = sub_log_w + math.log1p(math.exp(lw - sub_log_w))
            if np.random.random() < math.exp(lw - sub_log_w_new):
                sub_q, sub_lp, sub_g = q, lp, g
            sub_log_w = sub_log_w_new
            sub_rho += p
            p_sharp = inv_mass * p
            for k in range(1, j + 1):
                size = 1 << k
                if n % size == 0:
                    ckpt_p[k] = p_sharp
                    ckpt_rho[k] = 0.0
                ckpt_rho[k] += p
            turned = False
            for k in range(1, j + 1):
                size = 1 << k
                if (n + 1) % size == 0:
                    if _is_turning(ckpt_p[k], p_sharp, ckpt_rho[k]):
                        turned = True
                        break
            if turned:
                sub_ok = False
                break
        if not sub_ok:
            break
        # biased progressive sampling between the old tree and the new sub-tree
        if np.random.random() < math.exp(min(0.0, sub_log_w - log_w)):
            q_prop, lp_prop, g_prop = sub_q, sub_lp, sub_g
        if sub_log_w > log_w:
            log_w = sub_log_w + math.log1p(math.exp(log_w - sub_log_w))
        else:
            log_w = log_w + math.log1p(math.exp(sub_log_w - log_w))
        if direction > 0:
            q_right, p_right, g_right = q, p, g
        else:
            q_left, p_left, g_left = q, p, g
        rho += sub_rho
        if _is_turning(inv_mass * p_left, inv_mass * p_right, rho):
            break

    accept_stat = accept_sum / n_leaf if n_leaf > 0 else 0.0
    return q_prop, lp_prop, g_prop, accept_stat, n_leaf, depth, divergent


@nb.njit(cache=False)
def _window_ends(n_warmup):
    """Slow-adaptation window end points (exclusive) and the first slow iteration."""
    init_buf, term_buf, base = 75, 50, 25
    if n_warmup < 20:
        return np.zeros(0, dtype=np.int64), n_warmup
    if init_buf + term_buf + base > n_warmup:
        init_buf = int(0.15 * n_warmup)
        term_buf = int(0.1 * n_warmup)
        base = n_warmup - init_buf - term_buf
    ends = []
    start = init_buf
    size = base
    last = n_warmup - term_buf
    while start < last:
        end = start + size
        if end + 2 * size > last:
            end = last
        ends.append(end)
        start = end
        size *= 2
    out = np.empty(len(ends), dtype=np.int64)
    for i in range(len(ends)):
        out[i] = ends[i]
    return out, init_buf


@nb.njit(cache=False)
def run_nuts(logp_grad, args, q_init, n_warmup, n_draws, step_size, target_accept,
             max_depth, seed, adapt_mass):
    np.random.seed(seed)
    D = q_init.shape[0]
    inv_mass = np.ones(D)
    draws = np.empty((n_draws, D))
    accept = np.empty(n_warmup + n_draws)
    depths = np.empty(n_warmup + n_draws, dtype=np.int64)
    leapfrogs = np.empty(n_warmup + n_draws, dtype=np.int64)
    divergent = np.zeros(n_warmup + n_draws, dtype=np.bool_)

    q = q_init.copy()
    lp, g = logp_grad(q, args)
    if not _finite(lp, g):
        return draws, accept, depths, leapfrogs, divergent, step_size, inv_mass, STATUS_BAD_INIT

    eps = step_size
    if n_warmup > 0:
        eps = _reasonable_step_size(logp_grad, args, q, lp, g, eps, inv_mass)
    mu = math.log(10.0 * eps)
    hbar = 0.0
    log_eps_bar = 0.0
    t = 0

    window_ends, w_start = _window_ends(n_warmup)
    if not adapt_mass:
        window_ends = window_ends[:0]
    w_idx = 0
    w_n = 0
    w_mean = np.zeros(D)
    w_m2 = np.zeros(D)

    for it in range(n_warmup + n_draws):
        q, lp, g, a, nl, dep, div = _transition(logp_grad, args, q, lp, g, eps, inv_mass, max_depth)
        accept[it] = a
        depths[it] = dep
        leapfrogs[it] = nl
        divergent[it] = div
        if it < n_warmup:
            t += 1
            hbar = (1.0 - 1.0 / (t + T0)) * hbar + (target_accept - a) / (t + T0)
            log_eps = mu - math.sqrt(t) / GAMMA * hbar
            eta = t ** (-KAPPA)
            log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar
            eps = math.exp(log_eps)
            if w_idx < window_ends.shape[0] and it >= w_start:
                w_n += 1
                delta = q - w_mean
                w_mean += delta / w_n
                w_m2 += delta * (q - w_mean)
                if it + 1 == window_ends[w_idx]:
                    var = w_m2 / (w_n - 1) if w_n > 1 else np.ones(D)
                    inv_mass = (w_n / (w_n + 5.0)) * var + 1e-3 * (5.0 / (w_n + 5.0))
                    w_idx += 1
                    w_n = 0
                    w_mean[:] = 0.0
                    w_m2[:] = 0.0
                    eps = _reasonable_step_size(logp_grad, args, q, lp, g, eps, inv_mass)
                    mu = math.log(10.0 * eps)
                    hbar = 0.0
                    log_eps_bar = 0.0
                    t = 0
            if it + 1 == n_warmup:
                eps = math.exp(log_eps_bar)
        else:
            draws[it - n_warmup] = q
    return draws, accept, depths, leapfrogs, divergent, eps, inv_mass, STATUS_OK
