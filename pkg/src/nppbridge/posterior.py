"""Conditional posteriors and quadrature marginals for NPP, iNPP, BNPP and BHM.

Every model here has a normal conditional posterior for ``theta`` given the
discounting weights (or given ``v``), so the marginal posterior of ``theta``
is a one- or two-dimensional mixture of normals.  The mixing weights are
integrated by Gauss-Legendre quadrature with node doubling until the
normalized ``theta`` density stops changing.

The sum-of-squares terms of the historical likelihoods cancel against the
normalizing constant ``c(a0)``, so only sample means enter.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _backend
from .core import DensityGrid, NormalSummary, PriorSpec, StudySet, GridError, grid_from_log_density, normalize
from .quadrature import QuadratureError, UnitRule, unit_rule
from .transform import (
    InducedPrior,
    bridge_arrays,
    global_nodes,
    solve_global,
)

log = logging.getLogger(__name__)

DEFAULT_THETA_POINTS = 1025
DEFAULT_NODES = 256
MAX_NODES = 8192
DEFAULT_NODES_2D = 128
MAX_NODES_2D = 512
REL_TOL = 1e-8
PAD_SDS = 6.0
_PRUNE = math.log(1e-17)

Prior = PriorSpec | InducedPrior


# ---------------------------------------------------------------------------
# Conditional posterior and normalizing constant
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightAssignment:
    """One discounting weight in [0, 1] per historical dataset."""

    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        w = tuple(float(x) for x in np.atleast_1d(self.weights))
        if any(not (0.0 <= x <= 1.0) for x in w):
            raise ValueError(f"weights must lie in [0, 1], got {w}")
        object.__setattr__(self, "weights", w)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.weights)


@dataclass(frozen=True)
class ConditionalPosterior:
    """Normal posterior ``N(mu_p, sigma2_p)`` of ``theta`` at fixed weights."""

    mu_p: float
    sigma2_p: float

    @property
    def sd(self) -> float:
        return math.sqrt(self.sigma2_p)

    def pdf(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.exp(-0.5 * (theta - self.mu_p) ** 2 / self.sigma2_p) / math.sqrt(
            2.0 * math.pi * self.sigma2_p
        )


@dataclass(frozen=True)
class NppNormalizer:
    """``log c(a0)`` (sample-mean-dependent part) and the weighted mean ``M``."""

    log_c: float
    M: float


def _as_weights(study: StudySet, w) -> np.ndarray:
    if not isinstance(w, WeightAssignment):
        w = WeightAssignment(tuple(np.atleast_1d(w)))
    arr = w.array
    if arr.size != study.K:
        raise ValueError(f"expected {study.K} weights, got {arr.size}")
    return arr


def conditional_theta(study: StudySet, w) -> ConditionalPosterior:
    """Exact posterior of ``theta`` given discounting weights ``w``.

    Examples
    --------
    >>> s = StudySet(NormalSummary(20, 2.0, 0.5), (NormalSummary(20, 1.5, 0.3),))
    >>> round(conditional_theta(s, [0.5]).mu_p, 5)
    1.77273
    """
    wa = _as_weights(study, w)
    cur = study.current
    prec = cur.precision + float(wa @ study.prec0)
    mu = (cur.precision * cur.ybar + float(wa @ (study.prec0 * study.ybar0))) / prec
    return ConditionalPosterior(mu, 1.0 / prec)


def npp_normalizer(study: StudySet, w) -> NppNormalizer:
    """Normalizing constant of the discounted historical likelihoods.

    ``log c = 1/2 log(2 pi / S) + S M^2 / 2 - 1/2 sum_k w_k P0k ybar0k^2`` with
    ``S = sum_k w_k P0k`` and ``M = sum_k w_k P0k ybar0k / S``.  Terms involving
    the within-study sums of squares are omitted; they cancel in every
    posterior.
    """
    wa = _as_weights(study, w)
    if not np.any(wa > 0):
        raise ValueError("c(a0) diverges when every weight is zero")
    P0, y0 = study.prec0, study.ybar0
    S = float(wa @ P0)
    M = float(wa @ (P0 * y0)) / S
    log_c = 0.5 * math.log(2.0 * math.pi / S) + 0.5 * S * M * M - 0.5 * float(wa @ (P0 * y0 * y0))
    return NppNormalizer(log_c, M)


# ---------------------------------------------------------------------------
# theta grid and mixture evaluation
# ---------------------------------------------------------------------------


def theta_grid(study: StudySet, points: int = DEFAULT_THETA_POINTS) -> np.ndarray:
    """Grid spanning every conditional mean, padded by six no-borrowing sds.

    ``mu_p`` is a linear-fractional function of the weights, so its range over
    the weight box is attained at the box's vertices.
    """
    if points < 3:
        raise ValueError("points must be at least 3")
    cur = study.current
    if study.K <= 10:
        means = [conditional_theta(study, list(v)).mu_p
                 for v in itertools.product((0.0, 1.0), repeat=study.K)]
    else:
        means = [cur.ybar, *study.ybar0]
    pad = PAD_SDS * math.sqrt(cur.sigma2 / cur.n)
    return np.linspace(min(means) - pad, max(means) + pad, points)


def _mixture_grid(theta: np.ndarray, logw: np.ndarray, mu: np.ndarray, s2: np.ndarray) -> np.ndarray:
    logw = np.asarray(logw, dtype=float)
    if np.any(np.isnan(logw)):
        raise QuadratureError("NaN in quadrature log weights")
    m = np.max(logw)
    if not np.isfinite(m):
        raise QuadratureError("quadrature weights vanish everywhere")
    z = logw - m
    keep = z > _PRUNE
    return _backend.kernels.mixture_density(
        np.ascontiguousarray(theta, dtype=float),
        np.ascontiguousarray(z[keep]),
        np.ascontiguousarray(mu[keep], dtype=float),
        np.ascontiguousarray(s2[keep], dtype=float),
    )


def _normalized(theta: np.ndarray, dens: np.ndarray) -> np.ndarray:
    z = float(np.sum(0.5 * (dens[1:] + dens[:-1]) * np.diff(theta)))
    if not z > 0:
        raise QuadratureError("theta density integrates to zero on the grid")
    return dens / z


def _adaptive(
    build: Callable[[int], tuple[np.ndarray, np.ndarray, np.ndarray]],
    theta: np.ndarray,
    n_start: int,
    n_max: int,
    tol: float = REL_TOL,
) -> DensityGrid:
    """Double the node count until the normalized density changes by < ``tol``."""
    n = n_start
    prev = _normalized(theta, _mixture_grid(theta, *build(n)))
    while True:
        n *= 2
        if n > n_max:
            raise QuadratureError(
                f"quadrature did not converge to relative change {tol:g} with {n // 2} nodes"
            )
        cur = _normalized(theta, _mixture_grid(theta, *build(n)))
        change = float(np.max(np.abs(cur - prev)) / np.max(cur))
        if change < tol:
            log.debug("quadrature converged with %d nodes (change %.3g)", n, change)
            grid = DensityGrid(theta, cur)
            object.__setattr__(grid, "normalized", True)
            return grid
        prev = cur


def _theta(study: StudySet, theta, points: int) -> np.ndarray:
    if theta is None:
        return theta_grid(study, points)
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or np.any(np.diff(theta) <= 0):
        raise GridError("theta grid must be strictly increasing")
    return theta


def _require_k(study: StudySet, K: int) -> None:
    if study.K != K:
        raise ValueError(f"this operation needs exactly {K} historical dataset(s), got {study.K}")


def _unit_prior(prior: Prior) -> Prior:
    if not prior.on_unit_interval:
        raise ValueError("expected a prior on a0 supported on (0, 1)")
    return prior


def _positive_prior(prior: Prior) -> Prior:
    if prior.on_unit_interval:
        raise ValueError("expected a prior on v supported on (0, inf)")
    return prior


# ---------------------------------------------------------------------------
# Single historical dataset
# ---------------------------------------------------------------------------


def _npp_single_log_joint(study: StudySet, prior_a0: Prior, a0: np.ndarray, one_minus_a0=None):
    """log of pi(a0) a0^{1/2} exp(-n0 a0 ybar0^2 / (2 sigma2_0)) sigma_p exp(mu_p^2 / (2 sigma2_p))."""
    cur, hist = study.current, study.historical[0]
    P0 = hist.precision
    s2 = 1.0 / (cur.precision + a0 * P0)
    mu = s2 * (cur.precision * cur.ybar + a0 * P0 * hist.ybar)
    with np.errstate(divide="ignore"):
        lj = (prior_a0.logpdf(a0, one_minus_a0) + 0.5 * np.log(a0) - a0 * P0 * hist.ybar ** 2 / 2.0
              + 0.5 * np.log(s2) + 0.5 * mu * mu / s2)
    return lj, mu, s2


def marginal_theta_npp_single(
    study: StudySet,
    prior_a0: Prior,
    theta: np.ndarray | None = None,
    points: int = DEFAULT_THETA_POINTS,
    nodes: int = DEFAULT_NODES,
) -> DensityGrid:
    """Marginal posterior of ``theta`` under the NPP with one historical dataset."""
    _require_k(study, 1)
    _unit_prior(prior_a0)
    th = _theta(study, theta, points)

    def build(n: int):
        rule = unit_rule(n)
        lj, mu, s2 = _npp_single_log_joint(study, prior_a0, rule.u, rule.one_minus_u)
        return rule.log_weight + lj, mu, s2

    return _adaptive(build, th, nodes, MAX_NODES)


def a0_grid(points: int = DEFAULT_THETA_POINTS, eps: float = 1e-10) -> np.ndarray:
    """Points on (0, 1) clustered toward both ends."""
    t = np.linspace(0.0, 1.0, points)
    return np.unique(np.clip(np.sin(0.5 * np.pi * t) ** 2, eps, 1.0 - eps))


def marginal_a0_npp_single(
    study: StudySet, prior_a0: Prior, points: int = DEFAULT_THETA_POINTS
) -> DensityGrid:
    """Marginal posterior of ``a0`` under the NPP with one historical dataset."""
    _require_k(study, 1)
    _unit_prior(prior_a0)
    x = a0_grid(points)
    lj, _, _ = _npp_single_log_joint(study, prior_a0, x)
    return grid_from_log_density(x, lj)


def _bhm_single_build(study: StudySet, prior_v: Prior):
    cur, hist = study.current, study.historical[0]
    P0 = hist.precision
    Y = P0 * hist.ybar

    def build(n: int):
        rule = unit_rule(n)
        a0 = rule.u
        v = rule.one_minus_u / (2.0 * P0 * a0)
        log_dv = -np.log(2.0 * P0 * a0 * a0)
        s2 = 1.0 / (cur.precision + a0 * P0)
        mu = s2 * (cur.precision * cur.ybar + a0 * Y)
        with np.errstate(divide="ignore"):
            lj = (prior_v.logpdf(v) + 0.5 * np.log(a0) + v * a0 * Y * Y
                  + 0.5 * np.log(s2) + 0.5 * mu * mu / s2)
        return rule.log_weight + log_dv + lj, mu, s2

    return build


def marginal_theta_bhm_single(
    study: StudySet,
    prior_v: Prior,
    theta: np.ndarray | None = None,
    points: int = DEFAULT_THETA_POINTS,
    nodes: int = DEFAULT_NODES,
) -> DensityGrid:
    """Marginal posterior of ``theta`` under the BHM with one historical dataset.

    Uses the flat-``mu`` reduction of the BHM,
    ``pi(v) a0(v)^{1/2} exp(v a0(v) Y^2) sigma_p exp(mu_p^2 / (2 sigma2_p))``
    with ``a0(v) = f_single(v)``, integrated in ``u = a0(v)``.
    """
    _require_k(study, 1)
    _positive_prior(prior_v)
    return _adaptive(_bhm_single_build(study, prior_v), _theta(study, theta, points), nodes, MAX_NODES)


# ---------------------------------------------------------------------------
# Several historical datasets: BNPP and BHM
# ---------------------------------------------------------------------------


def _hist_matches(prior: InducedPrior, study: StudySet) -> bool:
    return tuple(prior.hist) == tuple(study.historical)


def _global_log_prior(study: StudySet, prior: Prior, g: np.ndarray, b: dict) -> np.ndarray:
    """log prior density on the global weight ``g`` for the BNPP.

    Priors stated on ``v`` are converted through the matching condition:
    ``pi_a0(g) = pi_v(v) R(v) / (Q(g) |f'(v)|)``.
    """
    if prior.on_unit_interval:
        return prior.logpdf(g, b["one_minus_a0"])
    return prior.logpdf(b["v"]) + b["log_R"] - b["log_Q"] - b["log_jacobian"]


def _bnpp_log_joint(study: StudySet, prior: Prior, g: np.ndarray, v: np.ndarray):
    """BNPP joint of the global weight with ``theta`` integrated out.

    ``pi(a0) Q(a0) sigma_p exp(mu_p^2 / (2 sigma2_p))`` with per-dataset
    weights ``a0k = c_k a0``.
    """
    cur = study.current
    P0, y0 = study.prec0, study.ybar0
    Y = P0 * y0
    b = bridge_arrays(v, P0, Y)
    w = b["c"] * g[:, None]
    s2 = 1.0 / (cur.precision + w @ P0)
    mu = s2 * (cur.precision * cur.ybar + w @ Y)
    lq = -g * (b["c"] @ Y) ** 2 / (2.0 * b["C"]) + 0.5 * np.log(g * b["C"])
    with np.errstate(divide="ignore"):
        lj = _global_log_prior(study, prior, g, b) + lq + 0.5 * np.log(s2) + 0.5 * mu * mu / s2
    return lj, mu, s2, b


def marginal_theta_bnpp(
    study: StudySet,
    prior: Prior,
    theta: np.ndarray | None = None,
    points: int = DEFAULT_THETA_POINTS,
    nodes: int = DEFAULT_NODES,
) -> DensityGrid:
    """Marginal posterior of ``theta`` under the BNPP.

    ``prior`` may be stated on the global weight ``a0`` (support (0, 1), only
    its values on ``(1/(1+K), 1)`` matter) or on ``v``.  Integration runs over
    the global weight with ``v = f^{-1}(a0)`` at each node.
    """
    th = _theta(study, theta, points)
    P0 = study.prec0

    def build(n: int):
        nd = global_nodes(n, P0)
        lj, mu, s2, _ = _bnpp_log_joint(study, prior, nd["g"], nd["v"])
        return nd["log_weight"] + lj, mu, s2

    return _adaptive(build, th, nodes, MAX_NODES)


def _bhm_multi_log_joint(study: StudySet, prior_v: Prior, v: np.ndarray):
    """BHM joint of ``v`` with ``theta`` integrated out (flat prior on ``mu``).

    ``pi(v) R(v) sigma_b exp(mu_b^2 / (2 sigma2_b))`` where
    ``1/sigma2_b = n/sigma2 + 1/v - 1/(v^2 A)`` and
    ``mu_b = sigma2_b (n ybar / sigma2 + sum_k Y_k N_k / (v^2 A))``.
    """
    cur = study.current
    P0, y0 = study.prec0, study.ybar0
    Y = P0 * y0
    b = bridge_arrays(v, P0, Y)
    vA = v * b["A"]
    # 1/v - 1/(v^2 A) = (vA - 1)/(v^2 A), and vA - 1 = vC exactly
    shrink = v * b["C"] / (v * vA)
    s2 = 1.0 / (cur.precision + shrink)
    mu = s2 * (cur.precision * cur.ybar + (b["N"] @ Y) / (v * vA))
    with np.errstate(divide="ignore"):
        lj = prior_v.logpdf(v) + b["log_R"] + 0.5 * np.log(s2) + 0.5 * mu * mu / s2
    return lj, mu, s2, b


def marginal_theta_bhm_multi(
    study: StudySet,
    prior_v: Prior,
    theta: np.ndarray | None = None,
    points: int = DEFAULT_THETA_POINTS,
    nodes: int = DEFAULT_NODES,
) -> DensityGrid:
    """Marginal posterior of ``theta`` under the BHM with ``K`` historical datasets.

    The ``v`` integral is taken over the global weight ``g = f(v)``; the
    change of variables contributes ``1 / |f'(v)|``.
    """
    _positive_prior(prior_v)
    th = _theta(study, theta, points)
    P0 = study.prec0

    def build(n: int):
        nd = global_nodes(n, P0)
        lj, mu, s2, b = _bhm_multi_log_joint(study, prior_v, nd["v"])
        return nd["log_weight"] - b["log_jacobian"] + lj, mu, s2

    return _adaptive(build, th, nodes, MAX_NODES)


def marginal_theta_bhm(study: StudySet, prior_v: Prior, **kw) -> DensityGrid:
    """BHM marginal for any ``K`` (single-dataset reduction when ``K = 1``)."""
    if study.K == 1:
        return marginal_theta_bhm_single(study, prior_v, **kw)
    return marginal_theta_bhm_multi(study, prior_v, **kw)


# ---------------------------------------------------------------------------
# iNPP
# ---------------------------------------------------------------------------


def _inpp_log_joint(study: StudySet, priors: Sequence[Prior], W: np.ndarray):
    """iNPP joint of the weights with ``theta`` integrated; ``W`` has shape (m, K)."""
    cur = study.current
    P0, y0 = study.prec0, study.ybar0
    S = W @ P0
    T = W @ (P0 * y0)
    s2 = 1.0 / (cur.precision + S)
    mu = s2 * (cur.precision * cur.ybar + T)
    with np.errstate(divide="ignore"):
        lp = sum(p.logpdf(W[:, k]) for k, p in enumerate(priors))
        # -log c(w) up to constants: -(1/2) log(2 pi / S) - T^2 / (2 S)
        lj = lp + 0.5 * np.log(S) - 0.5 * T * T / S + 0.5 * np.log(s2) + 0.5 * mu * mu / s2
    return lj, mu, s2


def _check_priors(study: StudySet, priors) -> list[Prior]:
    if isinstance(priors, (PriorSpec, InducedPrior)):
        priors = [priors] * study.K
    priors = list(priors)
    if len(priors) != study.K:
        raise ValueError(f"expected {study.K} priors, got {len(priors)}")
    for p in priors:
        _unit_prior(p)
    return priors


def _tensor(rules: Sequence[UnitRule]):
    grids = np.meshgrid(*[r.u for r in rules], indexing="ij")
    lws = np.meshgrid(*[r.log_weight for r in rules], indexing="ij")
    W = np.stack([g.ravel() for g in grids], axis=1)
    return W, sum(lw.ravel() for lw in lws)


def marginal_theta_inpp(
    study: StudySet,
    priors_a0,
    theta: np.ndarray | None = None,
    points: int = DEFAULT_THETA_POINTS,
) -> DensityGrid:
    """Marginal posterior of ``theta`` under the iNPP (independent weights).

    Deterministic for ``K <= 2`` (tensor-product quadrature).  For ``K >= 3``
    use :func:`nppbridge.mcmc.mwg_inpp`.
    """
    priors = _check_priors(study, priors_a0)
    if study.K >= 3:
        raise ValueError("deterministic iNPP supports K <= 2; use mcmc.mwg_inpp for K >= 3")
    th = _theta(study, theta, points)
    if study.K == 1:
        start, cap = DEFAULT_NODES, MAX_NODES
    else:
        start, cap = DEFAULT_NODES_2D, MAX_NODES_2D

    def build(n: int):
        W, lw = _tensor([unit_rule(n)] * study.K)
        lj, mu, s2 = _inpp_log_joint(study, priors, W)
        return lw + lj, mu, s2

    return _adaptive(build, th, start, cap)


# ---------------------------------------------------------------------------
# Discounting-weight marginals
# ---------------------------------------------------------------------------


def _h_inverse(x: np.ndarray, k: int, P0: np.ndarray) -> np.ndarray:
    """Solve ``h_k(v) = x`` by bisection in ``log v`` (vectorized)."""
    Pk = P0[k]
    lo = np.log((1.0 - x) / (Pk + P0.sum()))
    hi = np.log((1.0 - x) / (x * Pk))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        v = np.exp(mid)
        Pv = np.multiply.outer(v, P0)
        c = 1.0 / (1.0 + Pv)
        h = c[:, k] / (1.0 + (Pv * c).sum(axis=1))
        hi = np.where(h < x, mid, hi)
        lo = np.where(h < x, lo, mid)
        if np.all(hi - lo < 1e-15 * np.maximum(1.0, np.abs(mid))):
            break
    return np.exp(0.5 * (lo + hi))


def marginal_v_bnpp(study: StudySet, prior: Prior, v: np.ndarray) -> np.ndarray:
    """Unnormalized log posterior density of ``v`` under the BNPP."""
    v = np.asarray(v, dtype=float)
    P0 = study.prec0
    Pv = np.multiply.outer(v, P0)
    g = 1.0 / (1.0 + (Pv / (1.0 + Pv)).sum(axis=1))
    lj, _, _, b = _bnpp_log_joint(study, prior, g, v)
    return lj + b["log_jacobian"]


def marginal_a0k(
    study: StudySet,
    model: str,
    priors,
    points: int = DEFAULT_THETA_POINTS,
    chains=None,
) -> list[DensityGrid]:
    """Marginal posteriors of the per-dataset weights ``a0k``.

    ``model="bnpp"``: the ``v`` marginal is pushed through ``a0k = h_k(v)``.
    ``model="inpp"``: quadrature over the other weight for ``K <= 2``; for
    ``K >= 3`` pass ``chains`` from :func:`nppbridge.mcmc.mwg_inpp` and the
    grids are histograms of the draws.
    """
    x = a0_grid(points)
    if model == "bnpp":
        P0 = study.prec0
        out = []
        for k in range(study.K):
            v = _h_inverse(x, k, P0)
            lp = marginal_v_bnpp(study, priors, v)
            Pv = np.multiply.outer(v, P0)
            c = 1.0 / (1.0 + Pv)
            f = 1.0 / (1.0 + (Pv * c).sum(axis=1))
            dh = P0[k] * c[:, k] ** 2 * f + c[:, k] * f * f * ((c * c) @ P0)
            out.append(grid_from_log_density(x, lp - np.log(dh)))
        return out
    if model != "inpp":
        raise ValueError(f"unknown model {model!r}; expected 'bnpp' or 'inpp'")
    pri = _check_priors(study, priors)
    if study.K == 1:
        lj, _, _ = _inpp_log_joint(study, pri, x[:, None])
        return [grid_from_log_density(x, lj)]
    if study.K == 2:
        rule = unit_rule(512)
        out = []
        for k in range(2):
            W = np.empty((x.size * rule.u.size, 2))
            W[:, k] = np.repeat(x, rule.u.size)
            W[:, 1 - k] = np.tile(rule.u, x.size)
            lj, _, _ = _inpp_log_joint(study, pri, W)
            z = (lj + np.tile(rule.log_weight, x.size)).reshape(x.size, -1)
            m = z.max(axis=1, keepdims=True)
            out.append(grid_from_log_density(x, (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))).ravel()))
        return out
    if chains is None:
        raise ValueError("iNPP weight marginals for K >= 3 need sampler draws (chains=...)")
    return [_histogram_grid(chains.pooled(f"a0_{k + 1}")) for k in range(study.K)]


def _histogram_grid(samples: np.ndarray, bins: int = 200) -> DensityGrid:
    counts, edges = np.histogram(samples, bins=bins, range=(0.0, 1.0), density=True)
    centers = 0.5 * (edges[1:] + edges[:-1])
    return normalize(DensityGrid(centers, counts))


# ---------------------------------------------------------------------------
# Reference posteriors
# ---------------------------------------------------------------------------


def fixed_weight_posterior(
    study: StudySet,
    weights,
    theta: np.ndarray | None = None,
    points: int = DEFAULT_THETA_POINTS,
) -> DensityGrid:
    """``theta`` posterior with all weights fixed (``0`` = no borrowing, ``1`` = pooling)."""
    w = np.broadcast_to(np.asarray(weights, dtype=float), (study.K,))
    cp = conditional_theta(study, list(w))
    th = _theta(study, theta, points)
    return normalize(DensityGrid(th, cp.pdf(th)))
