"""Inverse-gamma and beta approximations to induced priors.

``fit_ig_kl`` minimizes ``KL(target || IG(c, d))``.  The inverse gamma is an
exponential family with sufficient statistics ``(log v, 1/v)``, so the
minimizer matches ``E[1/v] = c/d`` and ``E[log v] = log d - digamma(c)``.
``fit_beta_mle`` is covariate-free beta maximum likelihood.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from .core import DensityGrid, PriorSpec, trapezoid
from .transform import InducedPrior

MAX_ITER = 200
_EDGE_DECADES = 1.0


class FitError(ValueError):
    """The requested fit does not exist or did not converge."""


@dataclass(frozen=True)
class IgFit:
    c: float
    d: float
    kl: float

    def __post_init__(self) -> None:
        if not (self.c > 0 and self.d > 0):
            raise ValueError("IG parameters must be positive")

    @property
    def prior(self) -> PriorSpec:
        return PriorSpec.inverse_gamma(self.c, self.d)

    def pdf(self, v) -> np.ndarray:
        return self.prior.pdf(v)

    def to_dict(self) -> dict:
        return {"family": "inverse_gamma", "c": self.c, "d": self.d, "kl": self.kl}


@dataclass(frozen=True)
class BetaFit:
    alpha: float
    beta: float
    loglik: float

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("beta parameters must be positive")

    @property
    def prior(self) -> PriorSpec:
        return PriorSpec.beta(self.alpha, self.beta)

    def pdf(self, x) -> np.ndarray:
        return self.prior.pdf(x)

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def to_dict(self) -> dict:
        return {"family": "beta", "alpha": self.alpha, "beta": self.beta, "loglik": self.loglik}


def kl_divergence(
    p: DensityGrid, q_density: Callable[[np.ndarray], np.ndarray], log: bool = False
) -> float:
    """``KL(p || q)`` by the trapezoid rule on ``p``'s grid.

    With ``log=True``, ``q_density`` returns log densities, which avoids
    underflow far in the tails of ``q``.

    Examples
    --------
    >>> from scipy import stats
    >>> x = np.linspace(-12, 12, 20001)
    >>> p = DensityGrid(x, stats.norm.pdf(x), normalized=True)
    >>> round(kl_divergence(p, lambda t: stats.norm.pdf(t, 1.0)), 6)
    0.5
    """
    if not p.normalized:
        raise ValueError("p must be a normalized grid")
    x, px = p.points, p.density
    live = px > 1e-300
    with np.errstate(divide="ignore"):
        logq = np.asarray(q_density(x), dtype=float)
        if not log:
            logq = np.log(logq)
    if np.any(~np.isfinite(logq[live])):
        raise ValueError("q is zero where p has mass; KL is infinite")
    integrand = np.zeros_like(px)
    integrand[live] = px[live] * (np.log(px[live]) - logq[live])
    return trapezoid(integrand, x)


# ---------------------------------------------------------------------------
# Inverse gamma
# ---------------------------------------------------------------------------


def _edge_slope(x: np.ndarray, logp: np.ndarray, left: bool) -> float:
    """Log-log slope of the density over the outermost decade of a log grid."""
    lx = np.log(x)
    sel = lx <= lx[0] + _EDGE_DECADES * math.log(10) if left else lx >= lx[-1] - _EDGE_DECADES * math.log(10)
    sel &= np.isfinite(logp)
    if sel.sum() < 3:
        raise FitError("grid too coarse near its edge to check moment existence")
    return float(np.polyfit(lx[sel], logp[sel], 1)[0])


def ig_moments(target: DensityGrid, check_tails: bool = True) -> tuple[float, float]:
    """``(E[1/v], E[log v])`` of a density tabulated on a log-spaced grid.

    Integrals are taken in ``log v`` (weights ``p(v) v``).  Raises
    :class:`FitError` when the left edge decays too slowly for ``E[1/v]`` to
    exist, or the right edge too slowly for ``E[log v]``.  ``check_tails=False``
    treats the grid as the whole (truncated) support.
    """
    v, p = target.points, target.density
    if v[0] <= 0:
        raise FitError("target must live on (0, inf)")
    if check_tails:
        with np.errstate(divide="ignore"):
            logp = np.log(p)
        left = _edge_slope(v, logp, left=True)
        right = _edge_slope(v, logp, left=False)
        # p ~ v^left near 0: E[1/v] needs left > 0; p ~ v^right at inf: E[log v] needs right < -1
        if left <= 0.05:
            raise FitError(
                f"E[1/v] diverges (density ~ v^{left:.3g} near 0); no inverse-gamma KL "
                "minimizer exists (pass truncate=(lo, hi) to fit a central quantile range)"
            )
        if right >= -1.05:
            raise FitError(f"E[log v] diverges (density ~ v^{right:.3g} in the tail)")
    x = np.log(v)
    w = p * v
    z = trapezoid(w, x)
    return trapezoid(w / v, x) / z, trapezoid(w * x, x) / z


def _solve_ig_shape(s: float) -> float:
    """Solve ``log c - digamma(c) = s`` for ``c > 0`` (Newton in ``log c``)."""
    if not s > 0:
        raise FitError(f"moment condition log E[1/v] + E[log v] = {s} must be positive")
    # log c - psi(c) ~ 1/(2c) for large c and ~ 1/c for small c
    y = math.log(0.5 / s) if s < 0.5 else math.log(1.0 / s)
    for _ in range(MAX_ITER):
        c = math.exp(y)
        r = math.log(c) - special.digamma(c) - s
        dr = 1.0 - c * special.polygamma(1, c)  # d/dy of (log c - psi(c))
        step = r / dr
        y -= max(min(step, 2.0), -2.0)
        if abs(r) < 1e-10 * max(1.0, s) and abs(step) < 1e-12:
            return math.exp(y)
    c = math.exp(y)
    if abs(math.log(c) - special.digamma(c) - s) < 1e-10 * max(1.0, s):
        return c
    raise FitError("inverse-gamma shape equation did not converge in 200 iterations")


def truncate_grid(target: DensityGrid, lower_q: float, upper_q: float) -> DensityGrid:
    """Restrict a normalized grid to a central quantile range and renormalize."""
    lo, hi = target.quantile([lower_q, upper_q])
    keep = (target.points >= lo) & (target.points <= hi)
    pts, dens = target.points[keep], target.density[keep]
    return DensityGrid(pts, dens / trapezoid(dens, pts), normalized=True)


def fit_ig_kl(
    target: DensityGrid | InducedPrior, truncate: tuple[float, float] | None = None
) -> IgFit:
    """Inverse gamma minimizing ``KL(target || IG)`` by moment matching.

    ``truncate=(lo, hi)`` first restricts the target to that quantile range
    and renormalizes; this is the only way to fit targets whose ``E[1/v]``
    diverges, and the KL reported is against the truncated target.

    Examples
    --------
    >>> v = np.geomspace(1e-2, 1e8, 8193)
    >>> g = DensityGrid(v, PriorSpec.inverse_gamma(3.0, 1.0).pdf(v))
    >>> from .core import normalize
    >>> f = fit_ig_kl(normalize(g))
    >>> round(f.c, 3), round(f.d, 3)
    (3.0, 1.0)
    """
    grid = target.density if isinstance(target, InducedPrior) else target
    if isinstance(target, InducedPrior):
        if target.side != "on_v":
            raise FitError("inverse-gamma fit needs a density on v")
        if not target.proper and truncate is None:
            raise FitError("target is improper; E[log v] diverges")
    if not grid.normalized:
        raise FitError("target grid must be normalized")
    if truncate is not None:
        grid = truncate_grid(grid, *truncate)
    inv_mean, log_mean = ig_moments(grid, check_tails=truncate is None)
    c = _solve_ig_shape(math.log(inv_mean) + log_mean)
    d = c / inv_mean
    fit = IgFit(c, d, 0.0)
    return IgFit(c, d, max(kl_divergence(grid, fit.prior.logpdf, log=True), 0.0))


# ---------------------------------------------------------------------------
# Beta
# ---------------------------------------------------------------------------


def beta_moments_start(mean: float, var: float) -> tuple[float, float]:
    """Method-of-moments beta parameters."""
    common = mean * (1.0 - mean) / var - 1.0
    if not common > 0:
        raise FitError("sample variance too large for a beta distribution")
    return mean * common, (1.0 - mean) * common


def _beta_loglik(a: float, b: float, l1: float, l2: float) -> float:
    return (a - 1.0) * l1 + (b - 1.0) * l2 - special.betaln(a, b)


def fit_beta_mle(samples) -> BetaFit:
    """Beta maximum likelihood via Newton on the digamma score equations.

    ``loglik`` is the average log likelihood per sample.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise FitError(f"need at least 100 samples, got {x.size}")
    if np.any((x <= 0) | (x >= 1)) or not np.all(np.isfinite(x)):
        raise FitError("samples must lie strictly inside (0, 1); clip or resample first")
    var = float(x.var())
    if var == 0.0:
        raise FitError("samples have zero variance")
    l1, l2 = float(np.log(x).mean()), float(np.log1p(-x).mean())
    a, b = beta_moments_start(float(x.mean()), var)
    y = np.log([a, b])
    ll = _beta_loglik(a, b, l1, l2)
    for _ in range(MAX_ITER):
        a, b = np.exp(y)
        psab = special.digamma(a + b)
        grad = np.array([psab - special.digamma(a) + l1, psab - special.digamma(b) + l2])
        if np.linalg.norm(grad) < 1e-8:
            return BetaFit(float(a), float(b), float(ll))
        t = special.polygamma(1, a + b)
        H = np.array([[t - special.polygamma(1, a), t], [t, t - special.polygamma(1, b)]])
        # chain rule into log parameters
        J = np.diag([a, b])
        g_y = J @ grad
        H_y = J @ H @ J + np.diag(g_y)
        try:
            step = np.linalg.solve(H_y, -g_y)
        except np.linalg.LinAlgError:
            step = g_y
        if g_y @ step <= 0:  # not an ascent direction; use gradient
            step = g_y / max(1.0, np.abs(g_y).max())
        lam = 1.0
        while lam > 1e-10:
            cand = y + lam * step
            ll_new = _beta_loglik(*np.exp(cand), l1, l2)
            if ll_new >= ll - 1e-15:
                y, ll = cand, ll_new
                break
            lam *= 0.5
        else:
            raise FitError("beta likelihood line search failed")
    raise FitError("beta MLE did not converge in 200 iterations")
