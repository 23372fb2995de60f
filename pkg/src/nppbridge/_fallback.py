"""NumPy implementations of the compiled kernels in ``_kernels.pyx``.

Samplers loop over iterations and vectorize over chains.  They consume the
same pre-drawn random arrays as the compiled versions and follow the same
arithmetic, so chains agree up to floating-point rounding in ``exp``/``log``.
"""
from __future__ import annotations

import numpy as np

_CHUNK = 256


def mixture_density(theta, logw, mu, s2) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    w = np.exp(logw) / np.sqrt(2.0 * np.pi * s2)
    inv2 = 0.5 / s2
    for i in range(0, len(logw), _CHUNK):
        sl = slice(i, i + _CHUNK)
        x = theta[None, :] - mu[sl, None]
        out += (w[sl, None] * np.exp(-x * x * inv2[sl, None])).sum(axis=0)
    return out


def _prior_a0(code, f, one_minus_f, p1, p2):
    if code == 1:
        return (p1 - 1.0) * np.log(f) + (p2 - 1.0) * np.log(one_minus_f)
    return np.zeros_like(f)


def bnpp_target(x, prec, ybar, P0, Y, code, p1, p2, log_prior_v=None):
    """Collapsed BNPP log target of ``x = log v`` (vectorized over ``x``).

    ``log_prior_v`` optionally replaces the coded prior with a callable prior
    on ``v`` (used for tabulated priors, which have no compiled form).
    """
    v = np.exp(x)
    Pv = np.multiply.outer(v, P0)
    c = 1.0 / (1.0 + Pv)
    C = c @ P0
    cY = c @ Y
    csq = (c * c) @ P0
    vC = (Pv * c).sum(axis=-1)
    f = 1.0 / (1.0 + vC)
    s2 = 1.0 / (prec + f * C)
    mu = s2 * (prec * ybar + f * cY)
    theta_part = 0.5 * np.log(s2) + 0.5 * mu * mu / s2
    if log_prior_v is None and code <= 1:
        lp = (_prior_a0(code, f, vC * f, p1, p2)
              - f * cY * cY / (2.0 * C) + 0.5 * np.log(f * C)
              + 2.0 * np.log(f) + np.log(csq)
              + theta_part + x)
        return lp, mu, s2
    K = P0.size
    N = c * v[..., None]
    A = 1.0 / v + C
    YN = N @ Y
    log_r = (-0.5 * (K + 1) * x + 0.5 * np.log(N).sum(axis=-1) - 0.5 * np.log(A)
             + YN * YN / (2.0 * v * v * A) + 0.5 * (N @ (Y * Y)))
    if log_prior_v is not None:
        prior = log_prior_v(v)
    elif code == 2:
        prior = -(p1 + 1.0) * x - p2 / v
    else:
        prior = -0.5 * v * v / (p1 * p1)
    return prior + log_r + theta_part + x, mu, s2


def mwg_bnpp(prec, ybar, P0, Y, code, p1, p2, target, burn_in,
             x_init, log_scale_init, z, logu, log_prior_v=None):
    chains, iters = z.shape[0], z.shape[1]
    xs = np.empty((chains, iters))
    th = np.empty((chains, iters))
    acc = np.zeros(chains)
    x = np.array(x_init, dtype=float)
    ls = np.array(log_scale_init, dtype=float)
    lp, mu, s2 = bnpp_target(x, prec, ybar, P0, Y, code, p1, p2, log_prior_v)
    for t in range(iters):
        xp = x + np.exp(ls) * z[:, t, 0]
        lpp, mup, s2p = bnpp_target(xp, prec, ybar, P0, Y, code, p1, p2, log_prior_v)
        logr = lpp - lp
        if np.any(np.isnan(logr)):
            raise FloatingPointError("log target is NaN")
        take = logu[:, t] < logr
        x = np.where(take, xp, x)
        lp = np.where(take, lpp, lp)
        mu = np.where(take, mup, mu)
        s2 = np.where(take, s2p, s2)
        if t >= burn_in:
            acc += take
        else:
            a = np.where(logr > 0, 1.0, np.exp(np.minimum(logr, 0.0)))
            ls = ls + (a - target) / (t + 1.0) ** 0.6
        xs[:, t] = x
        th[:, t] = mu + np.sqrt(s2) * z[:, t, 1]
    return xs, th, acc, ls


def inpp_target(w, prec, ybar, P0, Y, codes, p1, p2, log_priors=None):
    """Collapsed iNPP log target in logit coordinates; ``w`` has shape (chains, K)."""
    S = w @ P0
    T = w @ Y
    if log_priors is None:
        lp = np.zeros(w.shape[0])
        for k in range(w.shape[1]):
            lp = lp + _prior_a0(codes[k], w[:, k], 1.0 - w[:, k], p1[k], p2[k])
    else:
        lp = sum(fn(w[:, k]) for k, fn in enumerate(log_priors))
    lp = lp + (np.log(w) + np.log(1.0 - w)).sum(axis=1)
    s2 = 1.0 / (prec + S)
    mu = s2 * (prec * ybar + T)
    return lp + 0.5 * np.log(s2) + 0.5 * mu * mu / s2 - 0.5 * T * T / S + 0.5 * np.log(S), mu, s2


def mwg_inpp(prec, ybar, P0, Y, codes, p1, p2, target, burn_in,
             y_init, log_scale_init, z, logu, log_priors=None):
    chains, iters = z.shape[0], z.shape[1]
    K = P0.size
    ws = np.empty((chains, iters, K))
    th = np.empty((chains, iters))
    acc = np.zeros((chains, K))
    yv = np.array(y_init, dtype=float)
    w = 1.0 / (1.0 + np.exp(-yv))
    ls = np.array(log_scale_init, dtype=float)
    lp, mu, s2 = inpp_target(w, prec, ybar, P0, Y, codes, p1, p2, log_priors)
    for t in range(iters):
        for k in range(K):
            old_y = yv[:, k].copy()
            old_w = w[:, k].copy()
            yv[:, k] = old_y + np.exp(ls[:, k]) * z[:, t, k]
            w[:, k] = 1.0 / (1.0 + np.exp(-yv[:, k]))
            with np.errstate(divide="ignore"):
                lpp, mup, s2p = inpp_target(w, prec, ybar, P0, Y, codes, p1, p2, log_priors)
            logr = lpp - lp
            if np.any(np.isnan(logr)):
                raise FloatingPointError("log target is NaN")
            take = logu[:, t, k] < logr
            lp = np.where(take, lpp, lp)
            mu = np.where(take, mup, mu)
            s2 = np.where(take, s2p, s2)
            yv[:, k] = np.where(take, yv[:, k], old_y)
            w[:, k] = np.where(take, w[:, k], old_w)
            if t >= burn_in:
                acc[:, k] += take
            else:
                a = np.where(logr > 0, 1.0, np.exp(np.minimum(logr, 0.0)))
                ls[:, k] = ls[:, k] + (a - target) / (t + 1.0) ** 0.6
        ws[:, t, :] = w
        th[:, t] = mu + np.sqrt(s2) * z[:, t, K]
    return ws, th, acc, ls


def gibbs_bhm_ig(prec, ybar, P0, ybar0, c, d, v_init, z, gam):
    chains, iters = z.shape[0], z.shape[1]
    K = P0.size
    th = np.empty((chains, iters))
    th0 = np.empty((chains, iters, K))
    mus = np.empty((chains, iters))
    vs = np.empty((chains, iters))
    mu = np.full(chains, (ybar + ybar0.sum()) / (K + 1.0))
    v = np.array(v_init, dtype=float)
    for t in range(iters):
        p = prec + 1.0 / v
        theta = (prec * ybar + mu / v) / p + z[:, t, 0] / np.sqrt(p)
        p0 = P0[None, :] + 1.0 / v[:, None]
        t0 = (P0 * ybar0 + mu[:, None] / v[:, None]) / p0 + z[:, t, 1:K + 1] / np.sqrt(p0)
        total = theta + t0.sum(axis=1)
        mu = total / (K + 1.0) + np.sqrt(v / (K + 1.0)) * z[:, t, K + 1]
        S = (theta - mu) ** 2 + ((t0 - mu[:, None]) ** 2).sum(axis=1)
        v = (d + 0.5 * S) / gam[:, t]
        if not np.all(v > 0):
            raise FloatingPointError("non-positive variance draw")
        th[:, t] = theta
        th0[:, t, :] = t0
        mus[:, t] = mu
        vs[:, t] = v
    return th, th0, mus, vs


def tab_eval(x, x0, dx, coef, ends):
    """Piecewise cubic in ``x``, extended linearly beyond the table."""
    n = coef.shape[1]
    top = x0 + n * dx
    i = np.clip(np.floor((x - x0) / dx), 0, n - 1).astype(np.intp)
    t = x - (x0 + i * dx)
    val = ((coef[0, i] * t + coef[1, i]) * t + coef[2, i]) * t + coef[3, i]
    val = np.where(x < x0, ends[0] + ends[1] * (x - x0), val)
    return np.where(x >= top, ends[2] + ends[3] * (x - top), val)


def gibbs_bhm_tab(prec, ybar, P0, ybar0, x0, dx, coef, ends, v_init, z, u, width):
    chains, iters = z.shape[0], z.shape[1]
    K, B = P0.size, u.shape[2]
    m = K + 1.0

    def target(x, S):
        return tab_eval(x, x0, dx, coef, ends) + (1.0 - 0.5 * m) * x - 0.5 * S * np.exp(-x)

    th = np.empty((chains, iters))
    th0 = np.empty((chains, iters, K))
    mus = np.empty((chains, iters))
    vs = np.empty((chains, iters))
    mu = np.full(chains, (ybar + ybar0.sum()) / m)
    v = np.array(v_init, dtype=float)
    for t in range(iters):
        p = prec + 1.0 / v
        theta = (prec * ybar + mu / v) / p + z[:, t, 0] / np.sqrt(p)
        p0 = P0[None, :] + 1.0 / v[:, None]
        t0 = (P0 * ybar0 + mu[:, None] / v[:, None]) / p0 + z[:, t, 1:K + 1] / np.sqrt(p0)
        total = theta + t0.sum(axis=1)
        mu = total / m + np.sqrt(v / m) * z[:, t, K + 1]
        S = (theta - mu) ** 2 + ((t0 - mu[:, None]) ** 2).sum(axis=1)
        x = np.log(v)
        y = target(x, S) + np.log(1.0 - u[:, t, 0])
        lo = x - width * u[:, t, 1]
        hi = lo + width
        for _ in range(64):
            out = target(lo, S) > y
            if not out.any():
                break
            lo = np.where(out, lo - width, lo)
        for _ in range(64):
            out = target(hi, S) > y
            if not out.any():
                break
            hi = np.where(out, hi + width, hi)
        todo = np.ones(chains, dtype=bool)
        for j in range(2, B):
            cand = lo + u[:, t, j] * (hi - lo)
            ok = todo & (target(cand, S) > y)
            x = np.where(ok, cand, x)
            todo &= ~ok
            if not todo.any():
                break
            lo = np.where(todo & (cand < x), cand, lo)
            hi = np.where(todo & (cand >= x), cand, hi)
        if todo.any():
            raise FloatingPointError("slice sampler did not converge onto the slice")
        v = np.exp(x)
        th[:, t] = theta
        th0[:, t, :] = t0
        mus[:, t] = mu
        vs[:, t] = v
    return th, th0, mus, vs
