"""Maps between the BHM heterogeneity variance ``v`` and NPP discounting weights.

Notation used throughout: for historical dataset ``k`` the precision of its
sample mean is ``P0k = n0k / sigma2_0k`` and ``Yk = P0k * ybar0k``.

Single historical dataset::

    a0 = f(v) = 1 / (2 v P0 + 1)

Several historical datasets share one global weight ``a0 = f(v)`` in
``(1/(1+K), 1)`` and per-dataset weights ``a0k = h_k(v) = c_k(v) f(v)`` with
``c_k = 1 / (1 + P0k v)``.  Priors on one side induce priors on the other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .core import DensityGrid, NormalSummary, PriorSpec, StudySet, normalize
from .quadrature import unit_rule

MASS_TOL = 1e-6       # tail mass that triggers an error when vmax is user supplied
AUTO_TAIL = 1e-8      # tail mass targeted when vmax is chosen automatically
VMAX_CAP = 1e16
DEFAULT_POINTS = 2049


class TransformError(ValueError):
    """Raised when a transform or induced prior cannot be computed as requested."""


def _hist_tuple(hist) -> tuple[NormalSummary, ...]:
    if isinstance(hist, StudySet):
        return hist.historical
    if isinstance(hist, NormalSummary):
        return (hist,)
    out = tuple(hist)
    if not out:
        raise TransformError("at least one historical dataset is required")
    return out


def _prec_and_y(hist) -> tuple[np.ndarray, np.ndarray]:
    h = _hist_tuple(hist)
    P0 = np.array([x.precision for x in h])
    return P0, P0 * np.array([x.ybar for x in h])


def _check_v(v, strict: bool = False) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if np.any(np.isnan(arr)):
        raise TransformError("v contains NaN")
    if strict and np.any(arr <= 0):
        raise TransformError("v must be positive")
    if np.any(arr < 0):
        raise TransformError("v must be nonnegative")
    return arr


def _scalar_or_array(x: np.ndarray, like):
    return float(x) if np.ndim(like) == 0 else x


# ---------------------------------------------------------------------------
# Single historical dataset
# ---------------------------------------------------------------------------


def f_single(v, hist: NormalSummary):
    """Discounting weight matched to heterogeneity variance ``v``."""
    arr = _check_v(v)
    out = 1.0 / (2.0 * arr * hist.precision + 1.0)
    return _scalar_or_array(out, v)


def f_single_inv(a0, hist: NormalSummary):
    """Inverse of :func:`f_single`: ``v = sigma2_0 (1 - a0) / (2 n0 a0)``."""
    arr = np.asarray(a0, dtype=float)
    if np.any(~((arr > 0) & (arr <= 1))):
        raise TransformError("a0 must lie in (0, 1]")
    out = (1.0 - arr) / (2.0 * hist.precision * arr)
    return _scalar_or_array(out, a0)


def log_abs_df_single(v, hist: NormalSummary) -> np.ndarray:
    """``log |d f_single / dv|``."""
    P = hist.precision
    v = np.asarray(v, dtype=float)
    return math.log(2.0 * P) - 2.0 * np.log1p(2.0 * v * P)


# ---------------------------------------------------------------------------
# Several historical datasets
# ---------------------------------------------------------------------------


def _c_k(v: np.ndarray, P0: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.multiply.outer(v, P0))


def f_multi(v, hist):
    """Global discounting weight ``1 / (1 + v * sum_k P0k c_k)``."""
    arr = _check_v(v)
    P0, _ = _prec_and_y(hist)
    c = _c_k(arr, P0)
    out = 1.0 / (1.0 + arr * (c @ P0))
    return _scalar_or_array(out, v)


def h_k(v, hist) -> np.ndarray:
    """Per-dataset weights ``c_k(v) f(v)``; shape ``(..., K)``."""
    arr = _check_v(v)
    P0, _ = _prec_and_y(hist)
    c = _c_k(arr, P0)
    f = 1.0 / (1.0 + arr * (c @ P0))
    return c * f[..., None]


def solve_global(s, r, P0: np.ndarray) -> np.ndarray:
    """Solve ``sum_k P0k v / (1 + P0k v) = s`` for ``v`` (vectorized).

    ``r = K - s`` must be supplied separately so that both ends of the range
    keep full relative precision.  Newton steps in ``log v`` are safeguarded by
    an analytic bracket, so the iteration cannot leave the root's interval.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    P0 = np.asarray(P0, dtype=float)
    K = P0.size
    if np.any(s <= 0) or np.any(r <= 0):
        raise TransformError("target outside the attainable range")
    # each term is increasing in P0k, which sandwiches the root
    lo = np.log(s) - np.log(P0.max() * r)
    hi = np.log(s) - np.log(P0.min() * r)
    lo = np.minimum(lo, np.log(s / P0.sum()))
    x = 0.5 * (lo + hi)
    use_r = s > 0.5 * K
    for _ in range(200):
        v = np.exp(x)
        c = 1.0 / (1.0 + np.multiply.outer(v, P0))
        slope = (c * c) @ P0 * v          # d s / d log v
        # near s = K work with r = sum(c) directly; elsewhere sum(P v c) keeps precision
        resid = np.where(use_r, -(c.sum(axis=-1) - r), (c * np.multiply.outer(v, P0)).sum(axis=-1) - s)
        lo = np.where(resid < 0, x, lo)
        hi = np.where(resid > 0, x, hi)
        step = x - resid / slope
        bad = ~((step > lo) & (step < hi))
        x_new = np.where(bad, 0.5 * (lo + hi), step)
        done = np.abs(x_new - x) <= 4e-16 * np.maximum(1.0, np.abs(x))
        x = x_new
        if np.all(done | (hi - lo <= 4e-16 * np.maximum(1.0, np.abs(x)))):
            break
    return np.exp(x)


def f_multi_inv(a0, hist):
    """Heterogeneity variance ``v`` with ``f_multi(v) = a0``.

    Brent's method in ``log v`` on an analytic bracket; the result satisfies
    ``|f_multi(v) - a0| < 1e-12``.
    """
    P0, _ = _prec_and_y(hist)
    K = P0.size
    lower = 1.0 / (1.0 + K)
    arr = np.atleast_1d(np.asarray(a0, dtype=float))
    if np.any(~((arr > lower) & (arr < 1.0))):
        raise TransformError(
            f"a0 must lie in the attainable range ({lower:.6g}, 1) for K={K}"
        )
    s = (1.0 - arr) / arr
    guess = solve_global(s, K - s, P0)
    out = np.empty_like(arr)
    for i, (target, g) in enumerate(zip(arr, guess)):
        def resid(x, target=target):
            return _f_from_prec(math.exp(x), P0) - target

        lo, hi = math.log(g) - 1e-6, math.log(g) + 1e-6
        while resid(lo) < 0:
            lo -= 1.0
        while resid(hi) > 0:
            hi += 1.0
        x = optimize.brentq(resid, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        out[i] = math.exp(x)
        if abs(_f_from_prec(out[i], P0) - target) >= 1e-12:
            raise TransformError(f"root finding failed for a0={target!r}")
    return float(out[0]) if np.ndim(a0) == 0 else out


def _f_from_prec(v: float, P0: np.ndarray) -> float:
    Pv = P0 * v
    return 1.0 / (1.0 + float(np.sum(Pv / (1.0 + Pv))))


@dataclass(frozen=True)
class BridgeQuantities:
    """Every quantity linking ``v`` to the matched NPP at one value of ``v``.

    ``Q`` and ``R`` may overflow for extreme data; ``log_Q`` and ``log_R`` are
    always finite.
    """

    v: float
    a0: float
    c_k: np.ndarray
    N_k: np.ndarray
    C: float
    Y_k: np.ndarray
    A: float
    log_Q: float
    log_R: float
    jacobian: float
    a0_k: np.ndarray = field(default=None)

    @property
    def Q(self) -> float:
        return math.exp(self.log_Q) if self.log_Q < 709 else math.inf

    @property
    def R(self) -> float:
        return math.exp(self.log_R) if self.log_R < 709 else math.inf


def bridge_arrays(v: np.ndarray, P0: np.ndarray, Y: np.ndarray) -> dict[str, np.ndarray]:
    """Vectorized bridge quantities for an array of ``v > 0``.

    The identity ``A = (1+K)/v - sum_k N_k / v^2 = 1/v + C`` is used for ``A`` to
    avoid cancellation at large ``v``.
    """
    v = np.asarray(v, dtype=float)
    K = P0.size
    Pv = np.multiply.outer(v, P0)
    c = 1.0 / (1.0 + Pv)
    N = c * v[..., None]
    C = c @ P0
    vC = Pv * c
    f = 1.0 / (1.0 + vC.sum(axis=-1))
    A = 1.0 / v + C
    cY = c @ Y
    log_q = -f * cY * cY / (2.0 * C) + 0.5 * np.log(f * C)
    YN = N @ Y
    log_r = (
        -0.5 * (K + 1) * np.log(v)
        + 0.5 * np.log(N).sum(axis=-1)
        - 0.5 * np.log(A)
        + YN * YN / (2.0 * v * v * A)
        + 0.5 * (N @ (Y * Y))
    )
    jac = f * f * ((c * c) @ P0)
    return {
        "v": v, "a0": f, "one_minus_a0": vC.sum(axis=-1) * f, "c": c, "N": N, "C": C, "A": A,
        "log_Q": log_q, "log_R": log_r, "jacobian": jac,
        "log_jacobian": 2.0 * np.log(f) + np.log((c * c) @ P0),
    }


def bridge_quantities(v: float, hist) -> BridgeQuantities:
    """All matching quantities at a single ``v > 0``."""
    _check_v(v, strict=True)
    P0, Y = _prec_and_y(hist)
    b = bridge_arrays(np.array([float(v)]), P0, Y)
    vals = [b["log_Q"][0], b["log_R"][0]]
    if any(math.isnan(x) for x in vals):
        raise TransformError(f"bridge quantities are NaN at v={v!r}")
    return BridgeQuantities(
        v=float(v),
        a0=float(b["a0"][0]),
        c_k=b["c"][0],
        N_k=b["N"][0],
        C=float(b["C"][0]),
        Y_k=Y.copy(),
        A=float(b["A"][0]),
        log_Q=float(b["log_Q"][0]),
        log_R=float(b["log_R"][0]),
        jacobian=float(b["jacobian"][0]),
        a0_k=b["c"][0] * b["a0"][0],
    )


# ---------------------------------------------------------------------------
# Induced priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InducedPrior:
    """A prior on ``v`` (``side="on_v"``) or ``a0`` (``side="on_a0"``) induced
    from ``source`` on the other side.

    ``density`` is the normalized tabulation used for display, sampling and
    fitting.  :meth:`logpdf` evaluates the exact log density (normalized by the
    same constant as the grid) and is what the quadrature engines use.
    ``proper`` is False when the induced density is not integrable on
    ``(0, inf)``; the grid is then normalized over its truncated range.
    """

    side: str
    density: DensityGrid
    source: PriorSpec
    data_dependent: bool
    hist: tuple[NormalSummary, ...]
    proper: bool = True
    tail_mass: float = 0.0
    log_norm: float = 0.0

    @property
    def support(self) -> str:
        return "positive" if self.side == "on_v" else "unit"

    @property
    def on_unit_interval(self) -> bool:
        return self.side == "on_a0"

    def _log_unnormalized(self, x: np.ndarray, one_minus_x=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, -np.inf)
        if self.side == "on_a0":
            omx = 1.0 - x if one_minus_x is None else np.broadcast_to(one_minus_x, x.shape)
            ok = (x > 0) & (omx > 0)
            h = self.hist[0]
            xv = x[ok]
            v = omx[ok] / (2.0 * h.precision * xv)
            out[ok] = self.source.logpdf(v) - np.log(2.0 * h.precision * xv * xv)
            return out
        ok = x > 0
        xv = x[ok]
        if len(self.hist) == 1 and not self.data_dependent:
            h = self.hist[0]
            tvp = 2.0 * h.precision * xv
            out[ok] = self.source.logpdf(1.0 / (1.0 + tvp), tvp / (1.0 + tvp)) + log_abs_df_single(xv, h)
            return out
        P0, Y = _prec_and_y(self.hist)
        b = bridge_arrays(xv, P0, Y)
        out[ok] = b["log_Q"] + b["log_jacobian"] + self.source.logpdf(b["a0"], b["one_minus_a0"]) - b["log_R"]
        return out

    def logpdf(self, x, one_minus_x=None) -> np.ndarray:
        return self._log_unnormalized(x, one_minus_x) - self.log_norm

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Draws from the tabulated density by inverse-CDF."""
        n = int(np.prod(size))
        return self.density.sample(rng, n).reshape(size)

    def as_prior(self) -> PriorSpec:
        return PriorSpec.tabulated(self.density, "positive" if self.side == "on_v" else "unit")


def _unit_grid(points: int, eps: float = 1e-10) -> np.ndarray:
    t = np.linspace(0.0, 1.0, points)
    u = np.sin(0.5 * np.pi * t) ** 2
    u = np.clip(u, eps, 1.0 - eps)
    return np.unique(u)


def _log_grid_density(x: np.ndarray, logp: np.ndarray) -> tuple[DensityGrid, float]:
    """Normalize exp(logp) on ``x`` by trapezoid; return grid and log constant."""
    finite = np.isfinite(logp)
    if not np.any(finite):
        raise TransformError("induced density is zero on the whole grid")
    m = float(np.max(logp[finite]))
    dens = np.where(finite, np.exp(logp - m), 0.0)
    z = float(np.sum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x)))
    grid = normalize(DensityGrid(x, dens))
    return grid, m + math.log(z)


def induce_prior_v_single(
    prior_a0: PriorSpec,
    hist: NormalSummary,
    vmax: float | None = None,
    points: int = DEFAULT_POINTS,
) -> InducedPrior:
    """Prior on ``v`` matching ``prior_a0`` for a single historical dataset.

    The density is the exact pushforward
    ``pi(v) = |f'(v)| pi_a0(f(v))`` with ``|f'(v)| = 2 P0 / (2 v P0 + 1)^2``.
    The tabulation is log-spaced on ``[vmin, vmax]``; ``vmin`` leaves less
    than 1e-10 of the mass to its left.

    Raises
    ------
    TransformError
        If a user-supplied ``vmax`` leaves more than 1e-6 of the mass beyond it.
    """
    if not prior_a0.on_unit_interval:
        raise TransformError("prior_a0 must be supported on (0, 1)")
    P = hist.precision

    def tail_beyond(v: float) -> float:
        return float(prior_a0.cdf(f_single(v, hist)))

    def mass_below(v: float) -> float:
        tvp = 2.0 * P * v
        return float(prior_a0.sf(1.0 / (1.0 + tvp), tvp / (1.0 + tvp)))

    if vmax is None:
        vmax = 1.0 / P
        while tail_beyond(vmax) > AUTO_TAIL and vmax < VMAX_CAP:
            vmax *= 10.0
        vmax = min(vmax, VMAX_CAP)
        tail = tail_beyond(vmax)
        if tail > MASS_TOL:
            raise TransformError(
                f"induced prior keeps {tail:.3g} of its mass beyond v={vmax:.3g}; "
                "the source prior puts too much weight near a0=0"
            )
    else:
        tail = tail_beyond(vmax)
        if tail > MASS_TOL:
            need = vmax
            while tail_beyond(need) > MASS_TOL and need < VMAX_CAP:
                need *= 10.0
            raise TransformError(
                f"vmax={vmax:.6g} leaves {tail:.3g} of the induced mass beyond it "
                f"(tolerance {MASS_TOL:g}); try vmax >= {need:.3g}"
            )
    vmin = min(1e-3 / P, vmax * 1e-6)
    while mass_below(vmin) > 1e-10 and vmin > 1e-300:
        vmin *= 0.1
    x = np.geomspace(vmin, vmax, points)
    ip = InducedPrior("on_v", DensityGrid(x, np.ones_like(x)), prior_a0, False, (hist,), True, tail)
    grid, _ = _log_grid_density(x, ip._log_unnormalized(x))
    # the exact pushforward of a proper prior needs no extra constant
    return InducedPrior("on_v", grid, prior_a0, False, (hist,), True, tail, 0.0)


def induce_prior_a0_single(
    prior_v: PriorSpec, hist: NormalSummary, points: int = 1025
) -> InducedPrior:
    """Prior on ``a0`` implied by ``prior_v`` for a single historical dataset.

    ``pi(a0) = pi_v(v(a0)) * sigma2_0 / (2 n0 a0^2)`` with
    ``v(a0) = sigma2_0 (1 - a0) / (2 n0 a0)``.
    """
    if prior_v.on_unit_interval:
        raise TransformError("prior_v must be supported on (0, inf)")
    if prior_v.kind == "tabulated":
        top = prior_v.grid.points[-1]
        if prior_v.cdf(top) < 1 - MASS_TOL:
            raise TransformError("prior_v has mass escaping its grid")
    x = _unit_grid(points, eps=1e-12)
    ip = InducedPrior("on_a0", DensityGrid(x, np.ones_like(x)), prior_v, False, (hist,))
    grid, _ = _log_grid_density(x, ip._log_unnormalized(x))
    # v decreases in a0, so the grid covers v in [v(x[-1]), v(x[0])]
    covered = float(prior_v.cdf(f_single_inv(x[0], hist)) - prior_v.cdf(f_single_inv(x[-1], hist)))
    if 1.0 - covered > 1e-3:
        raise TransformError(
            f"only {covered:.4g} of the v-prior mass maps inside the a0 grid"
        )
    return InducedPrior("on_a0", grid, prior_v, False, (hist,), True, 1.0 - covered)


def _tail_exponent(v: np.ndarray, logp: np.ndarray, decades: float = 2.0) -> float:
    """Slope of log density against log v over the last ``decades`` of the grid."""
    lv = np.log10(v)
    sel = lv >= lv[-1] - decades
    finite = np.isfinite(logp[sel])
    if finite.sum() < 3:
        return -np.inf
    return float(np.polyfit(lv[sel][finite], logp[sel][finite] / np.log(10.0), 1)[0])


def induce_prior_v_multi(
    prior_a0: PriorSpec,
    hist,
    vmax: float | None = None,
    points: int = DEFAULT_POINTS,
) -> InducedPrior:
    """Prior on ``v`` matching ``prior_a0`` on the global weight for ``K`` datasets.

    ``pi(v)`` is proportional to ``Q(f(v)) |f'(v)| pi_a0(f(v)) / R(v)``,
    evaluated in log space on a log-spaced grid.  The density depends on the
    historical means through ``Q`` and ``R``.

    For ``K >= 3`` the tail decays like ``v^((K-5)/2)`` and the density is not
    integrable; the result is flagged ``proper=False`` and normalized over
    ``(0, vmax]``.  Downstream posteriors remain proper.
    """
    if not prior_a0.on_unit_interval:
        raise TransformError("prior_a0 must be supported on (0, 1)")
    hist = _hist_tuple(hist)
    P0, Y = _prec_and_y(hist)
    K = P0.size
    scale = 1.0 / P0.max()
    proto = InducedPrior("on_v", DensityGrid([0.0, 1.0], [1.0, 1.0]), prior_a0, True, hist)

    def grid_for(top: float) -> tuple[np.ndarray, np.ndarray]:
        lo = min(1e-10 / P0.max(), top * 1e-12)
        x = np.geomspace(lo, top, points)
        return x, proto._log_unnormalized(x)

    def tail_fraction(x: np.ndarray, logp: np.ndarray) -> tuple[float, float]:
        # mass beyond the grid from a power-law fit to the last two decades
        slope = _tail_exponent(x, logp)
        m = np.max(logp[np.isfinite(logp)])
        dens = np.exp(logp - m)
        z = float(np.sum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x)))
        if slope >= -1.0:
            return math.inf, slope
        beyond = dens[-1] * x[-1] / (-slope - 1.0)
        return beyond / (z + beyond), slope

    proper = _is_integrable(proto, P0)
    if vmax is None:
        top = 10.0 * scale
        x, logp = grid_for(top)
        frac, _ = tail_fraction(x, logp)
        while frac > AUTO_TAIL and top < VMAX_CAP:
            top = min(top * 100.0, VMAX_CAP)
            x, logp = grid_for(top)
            frac, _ = tail_fraction(x, logp)
        if proper and frac > MASS_TOL:
            raise TransformError(
                f"induced prior keeps about {frac:.3g} of its mass beyond v={top:.3g}"
            )
    else:
        x, logp = grid_for(float(vmax))
        frac, _ = tail_fraction(x, logp)
        if proper and frac > MASS_TOL:
            need = float(vmax)
            f2 = frac
            while f2 > MASS_TOL and need < VMAX_CAP:
                need *= 10.0
                f2, _ = tail_fraction(*grid_for(need))
            raise TransformError(
                f"vmax={vmax:.6g} leaves about {frac:.3g} of the induced mass beyond it "
                f"(tolerance {MASS_TOL:g}); try vmax >= {need:.3g}"
            )
    grid, log_norm = _log_grid_density(x, logp)
    if proper:
        log_norm = _log_norm_global(prior_a0, P0, Y)
    return InducedPrior(
        "on_v", grid, prior_a0, True, hist, proper,
        frac if proper else math.inf, log_norm,
    )


def _is_integrable(proto: InducedPrior, P0: np.ndarray) -> bool:
    """Decide integrability from the power-law exponent far out in the tail."""
    v = np.array([1e12, 1e14]) / P0.min()
    lp = proto._log_unnormalized(v)
    if not np.all(np.isfinite(lp)):
        return bool(np.all(lp == -np.inf))
    slope = (lp[1] - lp[0]) / (2.0 * math.log(10.0))
    return slope < -1.0 - 1e-3


def global_nodes(n: int, P0: np.ndarray) -> dict[str, np.ndarray]:
    """Quadrature nodes for the global weight ``g`` on ``(1/(1+K), 1)``.

    Returns the nodes ``g``, the matching ``v = f^{-1}(g)``, and log weights for
    integrating over ``g``.
    """
    K = P0.size
    L = 1.0 / (1.0 + K)
    rule = unit_rule(n)
    g = L + (1.0 - L) * rule.u
    s = (1.0 - L) * rule.one_minus_u / g           # (1 - g) / g
    r = (1.0 + K) * (1.0 - L) * rule.u / g         # K - s
    v = solve_global(s, r, P0)
    return {"g": g, "one_minus_g": s * g, "v": v, "log_weight": rule.log_weight + math.log(1.0 - L)}


def _log_norm_global(prior_a0: PriorSpec, P0: np.ndarray, Y: np.ndarray, n: int = 1024) -> float:
    """log of the integral of ``Q pi_a0 / R`` over the global weight."""
    nodes = global_nodes(n, P0)
    b = bridge_arrays(nodes["v"], P0, Y)
    z = b["log_Q"] + prior_a0.logpdf(nodes["g"], nodes["one_minus_g"]) - b["log_R"] + nodes["log_weight"]
    m = np.max(z)
    return float(m + np.log(np.sum(np.exp(z - m))))


def a0_image_range(K: int) -> tuple[float, float]:
    """Attainable range of the global weight for ``K`` historical datasets."""
    return 1.0 / (1.0 + K), 1.0


def swap_invariance_ok(prior_a0: PriorSpec, hist: Sequence[NormalSummary]) -> bool:
    """True when the induced density is unchanged by reversing dataset order."""
    a = induce_prior_v_multi(prior_a0, hist)
    b = induce_prior_v_multi(prior_a0, tuple(reversed(tuple(hist))))
    return bool(np.allclose(a.density.density, b.density.density, rtol=1e-10, atol=0))
