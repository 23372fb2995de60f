# cython: language_level=3
"""Compiled inner loops.  Every function has a NumPy twin in ``_fallback``.

Samplers consume pre-drawn random numbers so both implementations produce the
same chains for the same seed.
"""
import numpy as np

from libc.math cimport exp, log, sqrt, M_PI

cdef enum:
    SMALL_K = 64


def mixture_density(const double[::1] theta, const double[::1] logw,
                    const double[::1] mu, const double[::1] s2):
    """sum_i exp(logw_i) N(theta; mu_i, s2_i) evaluated on every theta."""
    cdef Py_ssize_t n = theta.shape[0], m = logw.shape[0], i, j
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double w, inv2, t, x
    for i in range(m):
        w = exp(logw[i]) / sqrt(2.0 * M_PI * s2[i])
        inv2 = 0.5 / s2[i]
        for j in range(n):
            x = theta[j] - mu[i]
            o[j] += w * exp(-x * x * inv2)
    return out


cdef inline double _prior_a0(int code, double f, double one_minus_f,
                             double p1, double p2) nogil:
    if code == 1:
        return (p1 - 1.0) * log(f) + (p2 - 1.0) * log(one_minus_f)
    return 0.0


cdef double _bnpp_target(double x, double prec, double ybar,
                         const double[::1] P0, const double[::1] Y,
                         int code, double p1, double p2,
                         double* mu_out, double* s2_out) nogil:
    """log target of x = log v for the collapsed BNPP sampler."""
    cdef Py_ssize_t K = P0.shape[0], k
    cdef double v = exp(x), c, C = 0.0, cY = 0.0, csq = 0.0, vC = 0.0
    cdef double sumlogN = 0.0, YN = 0.0, YYN = 0.0, N
    for k in range(K):
        c = 1.0 / (1.0 + P0[k] * v)
        C += P0[k] * c
        cY += c * Y[k]
        csq += P0[k] * c * c
        vC += P0[k] * v * c
        N = c * v
        sumlogN += log(N)
        YN += Y[k] * N
        YYN += Y[k] * Y[k] * N
    cdef double f = 1.0 / (1.0 + vC)
    cdef double s2 = 1.0 / (prec + f * C)
    cdef double mu = s2 * (prec * ybar + f * cY)
    mu_out[0] = mu
    s2_out[0] = s2
    cdef double theta_part = 0.5 * log(s2) + 0.5 * mu * mu / s2
    cdef double A, log_r
    if code <= 1:
        return (_prior_a0(code, f, vC * f, p1, p2)
                - f * cY * cY / (2.0 * C) + 0.5 * log(f * C)
                + 2.0 * log(f) + log(csq)
                + theta_part + x)
    A = 1.0 / v + C
    log_r = (-0.5 * (K + 1) * x + 0.5 * sumlogN - 0.5 * log(A)
             + YN * YN / (2.0 * v * v * A) + 0.5 * YYN)
    if code == 2:
        return -(p1 + 1.0) * x - p2 / v + log_r + theta_part + x
    return -0.5 * v * v / (p1 * p1) + log_r + theta_part + x


def mwg_bnpp(double prec, double ybar, const double[::1] P0, const double[::1] Y,
             int code, double p1, double p2, double target, Py_ssize_t burn_in,
             const double[::1] x_init, const double[::1] log_scale_init,
             const double[:, :, ::1] z, const double[:, ::1] logu):
    """Random-walk Metropolis on log v with exact theta draws; one loop per chain."""
    cdef Py_ssize_t chains = z.shape[0], iters = z.shape[1], ch, t
    xs = np.empty((chains, iters))
    th = np.empty((chains, iters))
    acc = np.zeros(chains)
    scales = np.empty(chains)
    cdef double[:, ::1] xo = xs, tho = th
    cdef double[::1] acco = acc, so = scales
    cdef double x, lp, xp, lpp, ls, mu, s2, mup, s2p, logr, a
    for ch in range(chains):
        x = x_init[ch]
        ls = log_scale_init[ch]
        lp = _bnpp_target(x, prec, ybar, P0, Y, code, p1, p2, &mu, &s2)
        for t in range(iters):
            xp = x + exp(ls) * z[ch, t, 0]
            lpp = _bnpp_target(xp, prec, ybar, P0, Y, code, p1, p2, &mup, &s2p)
            logr = lpp - lp
            if logr != logr:
                raise FloatingPointError("log target is NaN")
            if logu[ch, t] < logr:
                x = xp
                lp = lpp
                mu = mup
                s2 = s2p
                if t >= burn_in:
                    acco[ch] += 1.0
            if t < burn_in:
                a = 1.0 if logr > 0 else exp(logr)
                ls += (a - target) / (t + 1.0) ** 0.6
            xo[ch, t] = x
            tho[ch, t] = mu + sqrt(s2) * z[ch, t, 1]
        so[ch] = ls
    return xs, th, acc, scales


cdef double _inpp_target(const double* w, Py_ssize_t K, double prec, double ybar,
                         const double[::1] P0, const double[::1] Y,
                         const int[::1] codes, const double[::1] p1, const double[::1] p2,
                         double* mu_out, double* s2_out) nogil:
    cdef Py_ssize_t k
    cdef double S = 0.0, T = 0.0, lp = 0.0
    for k in range(K):
        S += w[k] * P0[k]
        T += w[k] * Y[k]
        lp += _prior_a0(codes[k], w[k], 1.0 - w[k], p1[k], p2[k])
        lp += log(w[k]) + log(1.0 - w[k])
    cdef double s2 = 1.0 / (prec + S)
    cdef double mu = s2 * (prec * ybar + T)
    mu_out[0] = mu
    s2_out[0] = s2
    return lp + 0.5 * log(s2) + 0.5 * mu * mu / s2 - 0.5 * T * T / S + 0.5 * log(S)


def mwg_inpp(double prec, double ybar, const double[::1] P0, const double[::1] Y,
             const int[::1] codes, const double[::1] p1, const double[::1] p2,
             double target, Py_ssize_t burn_in,
             const double[:, ::1] y_init, const double[:, ::1] log_scale_init,
             const double[:, :, ::1] z, const double[:, :, ::1] logu):
    """Coordinate-wise random-walk Metropolis on logit(a0k) with exact theta draws."""
    cdef Py_ssize_t chains = z.shape[0], iters = z.shape[1], K = P0.shape[0]
    cdef Py_ssize_t ch, t, k
    if K > SMALL_K:
        raise ValueError("too many historical datasets for the compiled sampler")
    ws = np.empty((chains, iters, K))
    th = np.empty((chains, iters))
    acc = np.zeros((chains, K))
    scales = np.empty((chains, K))
    cdef double[:, :, ::1] wo = ws
    cdef double[:, ::1] tho = th, acco = acc, so = scales
    cdef double w[SMALL_K]
    cdef double yv[SMALL_K]
    cdef double ls[SMALL_K]
    cdef double lp, lpp, mu, s2, mup, s2p, logr, a, old_y, old_w
    for ch in range(chains):
        for k in range(K):
            yv[k] = y_init[ch, k]
            w[k] = 1.0 / (1.0 + exp(-yv[k]))
            ls[k] = log_scale_init[ch, k]
        lp = _inpp_target(w, K, prec, ybar, P0, Y, codes, p1, p2, &mu, &s2)
        for t in range(iters):
            for k in range(K):
                old_y = yv[k]
                old_w = w[k]
                yv[k] = old_y + exp(ls[k]) * z[ch, t, k]
                w[k] = 1.0 / (1.0 + exp(-yv[k]))
                lpp = _inpp_target(w, K, prec, ybar, P0, Y, codes, p1, p2, &mup, &s2p)
                logr = lpp - lp
                if logr != logr:
                    raise FloatingPointError("log target is NaN")
                if logu[ch, t, k] < logr:
                    lp = lpp
                    mu = mup
                    s2 = s2p
                    if t >= burn_in:
                        acco[ch, k] += 1.0
                else:
                    yv[k] = old_y
                    w[k] = old_w
                if t < burn_in:
                    a = 1.0 if logr > 0 else exp(logr)
                    ls[k] += (a - target) / (t + 1.0) ** 0.6
            for k in range(K):
                wo[ch, t, k] = w[k]
            tho[ch, t] = mu + sqrt(s2) * z[ch, t, K]
        for k in range(K):
            so[ch, k] = ls[k]
    return ws, th, acc, scales


def gibbs_bhm_ig(double prec, double ybar, const double[::1] P0, const double[::1] ybar0,
                 double c, double d, const double[::1] v_init,
                 const double[:, :, ::1] z, const double[:, ::1] gam):
    """Conjugate Gibbs sampler for the normal BHM with flat mu and IG(c, d) on v."""
    cdef Py_ssize_t chains = z.shape[0], iters = z.shape[1], K = P0.shape[0]
    cdef Py_ssize_t ch, t, k
    if K > SMALL_K:
        raise ValueError("too many historical datasets for the compiled sampler")
    th = np.empty((chains, iters))
    th0 = np.empty((chains, iters, K))
    mus = np.empty((chains, iters))
    vs = np.empty((chains, iters))
    cdef double[:, ::1] tho = th, muo = mus, vo = vs
    cdef double[:, :, ::1] th0o = th0
    cdef double t0[SMALL_K]
    cdef double theta, mu, v, p, S, total
    for ch in range(chains):
        theta = ybar
        total = ybar
        for k in range(K):
            t0[k] = ybar0[k]
            total += ybar0[k]
        mu = total / (K + 1.0)
        v = v_init[ch]
        for t in range(iters):
            p = prec + 1.0 / v
            theta = (prec * ybar + mu / v) / p + z[ch, t, 0] / sqrt(p)
            total = theta
            for k in range(K):
                p = P0[k] + 1.0 / v
                t0[k] = (P0[k] * ybar0[k] + mu / v) / p + z[ch, t, k + 1] / sqrt(p)
                total += t0[k]
            mu = total / (K + 1.0) + sqrt(v / (K + 1.0)) * z[ch, t, K + 1]
            S = (theta - mu) * (theta - mu)
            for k in range(K):
                S += (t0[k] - mu) * (t0[k] - mu)
            v = (d + 0.5 * S) / gam[ch, t]
            if not v > 0.0:
                raise FloatingPointError("non-positive variance draw")
            tho[ch, t] = theta
            muo[ch, t] = mu
            vo[ch, t] = v
            for k in range(K):
                th0o[ch, t, k] = t0[k]
    return th, th0, mus, vs


cdef inline double _tab_eval(double x, double x0, double dx, const double[:, ::1] coef,
                             double lo_val, double lo_slope, double hi_val, double hi_slope) nogil:
    """Piecewise cubic in x, extended linearly beyond the table."""
    cdef Py_ssize_t n = coef.shape[1], i
    cdef double t, top = x0 + n * dx
    if x < x0:
        return lo_val + lo_slope * (x - x0)
    if x >= top:
        return hi_val + hi_slope * (x - top)
    i = <Py_ssize_t>((x - x0) / dx)
    if i >= n:
        i = n - 1
    t = x - (x0 + i * dx)
    return ((coef[0, i] * t + coef[1, i]) * t + coef[2, i]) * t + coef[3, i]


cdef inline double _tab_target(double x, double S, double m, double x0, double dx,
                               const double[:, ::1] coef, double lo_val, double lo_slope,
                               double hi_val, double hi_slope) nogil:
    return (_tab_eval(x, x0, dx, coef, lo_val, lo_slope, hi_val, hi_slope)
            + (1.0 - 0.5 * m) * x - 0.5 * S * exp(-x))


def gibbs_bhm_tab(double prec, double ybar, const double[::1] P0, const double[::1] ybar0,
                  double x0, double dx, const double[:, ::1] coef, const double[::1] ends,
                  const double[::1] v_init, const double[:, :, ::1] z,
                  const double[:, :, ::1] u, double width):
    """Gibbs sampler for the normal BHM with a tabulated log prior on log v.

    ``v`` is updated by stepping-out slice sampling on ``log v``.  ``u`` holds
    the uniforms for each slice update: the level, the initial offset and
    the shrinkage candidates.  ``ends`` is (value, slope) at each table end.
    """
    cdef Py_ssize_t chains = z.shape[0], iters = z.shape[1], K = P0.shape[0]
    cdef Py_ssize_t B = u.shape[2], ch, t, k, j, s
    if K > SMALL_K:
        raise ValueError("too many historical datasets for the compiled sampler")
    th = np.empty((chains, iters))
    th0 = np.empty((chains, iters, K))
    mus = np.empty((chains, iters))
    vs = np.empty((chains, iters))
    cdef double[:, ::1] tho = th, muo = mus, vo = vs
    cdef double[:, :, ::1] th0o = th0
    cdef double t0[SMALL_K]
    cdef double theta, mu, v, p, S, total, x, y, lo, hi, cand, m = K + 1.0
    cdef double lv = ends[0], ls = ends[1], hv = ends[2], hs = ends[3]
    cdef bint found
    for ch in range(chains):
        total = ybar
        for k in range(K):
            total += ybar0[k]
        mu = total / m
        v = v_init[ch]
        for t in range(iters):
            p = prec + 1.0 / v
            theta = (prec * ybar + mu / v) / p + z[ch, t, 0] / sqrt(p)
            total = theta
            for k in range(K):
                p = P0[k] + 1.0 / v
                t0[k] = (P0[k] * ybar0[k] + mu / v) / p + z[ch, t, k + 1] / sqrt(p)
                total += t0[k]
            mu = total / m + sqrt(v / m) * z[ch, t, K + 1]
            S = (theta - mu) * (theta - mu)
            for k in range(K):
                S += (t0[k] - mu) * (t0[k] - mu)
            x = log(v)
            y = _tab_target(x, S, m, x0, dx, coef, lv, ls, hv, hs) + log(1.0 - u[ch, t, 0])
            lo = x - width * u[ch, t, 1]
            hi = lo + width
            for s in range(64):
                if _tab_target(lo, S, m, x0, dx, coef, lv, ls, hv, hs) <= y:
                    break
                lo -= width
            for s in range(64):
                if _tab_target(hi, S, m, x0, dx, coef, lv, ls, hv, hs) <= y:
                    break
                hi += width
            found = False
            for j in range(2, B):
                cand = lo + u[ch, t, j] * (hi - lo)
                if _tab_target(cand, S, m, x0, dx, coef, lv, ls, hv, hs) > y:
                    x = cand
                    found = True
                    break
                if cand < x:
                    lo = cand
                else:
                    hi = cand
            if not found:
                raise FloatingPointError("slice sampler did not converge onto the slice")
            v = exp(x)
            tho[ch, t] = theta
            muo[ch, t] = mu
            vo[ch, t] = v
            for k in range(K):
                th0o[ch, t, k] = t0[k]
    return th, th0, mus, vs
