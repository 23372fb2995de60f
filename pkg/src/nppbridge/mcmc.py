"""MCMC samplers for the BHM, BNPP, iNPP and a Bernoulli-likelihood BHM.

All randomness comes from one integer seed: ``SeedSequence(seed)`` is split
into one Philox stream per chain.  The compiled samplers and their NumPy
twins consume the same pre-drawn normals and uniforms, so a seed fixes the
draws regardless of backend (up to last-bit rounding of ``exp``/``log``).

Random-walk proposal scales adapt by Robbins-Monro during burn-in and are then
frozen.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import _backend, _fallback
from .approx import TwoArmBinomialSummary
from .core import PriorSpec, StudySet
from .diagnostics import Diagnostic, diagnose
from .transform import InducedPrior, bridge_arrays

log = logging.getLogger(__name__)

Prior = PriorSpec | InducedPrior

ACCEPT_LOW, ACCEPT_HIGH = 0.05, 0.95
_LOG_SCALE_CLIP = 12.0


class SamplerError(RuntimeError):
    """Numerical failure inside a sampler."""


@dataclass(frozen=True)
class SamplerConfig:
    """Chain layout, seed and initial proposal scale."""

    chains: int = 4
    iterations: int = 10_000
    burn_in: int = 5_000
    seed: int = 20_240_101
    proposal_scale: float = 1.0
    target_accept: float = 0.44

    def __post_init__(self) -> None:
        if self.chains < 2:
            raise ValueError("need at least 2 chains")
        if not 0 < self.burn_in < self.iterations:
            raise ValueError("require 0 < burn_in < iterations")
        if not self.proposal_scale > 0:
            raise ValueError("proposal_scale must be positive")
        if not 0.1 <= self.target_accept <= 0.6:
            raise ValueError("target_accept must lie in [0.1, 0.6]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def preset(cls, name: str, **overrides) -> "SamplerConfig":
        """``fig_a1`` (4 x 10000, 5000 burn-in) or ``fig_a2`` (4 x 8000, 4000 burn-in)."""
        table = {
            "fig_a1": dict(chains=4, iterations=10_000, burn_in=5_000),
            "fig_a2": dict(chains=4, iterations=8_000, burn_in=4_000),
        }
        if name not in table:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(table)}")
        return cls(**{**table[name], **overrides})

    def generators(self) -> list[np.random.Generator]:
        seeds = np.random.SeedSequence(self.seed).spawn(self.chains)
        return [np.random.Generator(np.random.Philox(s)) for s in seeds]

    def to_dict(self) -> dict:
        return {
            "chains": self.chains, "iterations": self.iterations, "burn_in": self.burn_in,
            "seed": self.seed, "proposal_scale": self.proposal_scale,
            "target_accept": self.target_accept,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        return cls(**d)


@dataclass(frozen=True)
class ChainSet:
    """Draws per parameter, each of shape ``(chains, iterations)`` including burn-in."""

    draws: dict[str, np.ndarray]
    burn_in: int
    seed: int
    acceptance: dict[str, np.ndarray] = field(default_factory=dict)
    backend: str = _backend.NAME
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        shapes = {d.shape for d in self.draws.values()}
        if len(shapes) != 1:
            raise ValueError(f"parameters have mismatched shapes {shapes}")
        (shape,) = shapes
        if len(shape) != 2 or shape[1] <= self.burn_in:
            raise ValueError("iterations must exceed burn_in")
        for d in self.draws.values():
            d.setflags(write=False)

    @property
    def names(self) -> list[str]:
        return list(self.draws)

    @property
    def chains(self) -> int:
        return next(iter(self.draws.values())).shape[0]

    @property
    def iterations(self) -> int:
        return next(iter(self.draws.values())).shape[1]

    def kept(self, name: str) -> np.ndarray:
        """Post-burn-in draws, shape ``(chains, iterations - burn_in)``."""
        return self.draws[name][:, self.burn_in:]

    def pooled(self, name: str) -> np.ndarray:
        return self.kept(name).ravel()

    def diagnostics(self, names: Sequence[str] | None = None) -> dict[str, Diagnostic]:
        return {k: diagnose(self.kept(k)) for k in (names or self.draws)}

    @property
    def ess(self) -> dict[str, float]:
        return {k: d.ess for k, d in self.diagnostics().items()}

    @property
    def split_rhat(self) -> dict[str, float]:
        return {k: d.split_rhat for k, d in self.diagnostics().items()}

    def write_long_csv(self, path) -> None:
        """Post-burn-in draws as ``chain, iter, parameter, value`` rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "iter", "parameter", "value"])
            for name in self.draws:
                x = self.kept(name)
                its = np.arange(self.burn_in, self.iterations)
                for ch in range(x.shape[0]):
                    w.writerows(
                        (ch, int(it), name, f"{val:.17g}") for it, val in zip(its, x[ch])
                    )


def _finish(draws, cfg: SamplerConfig, acceptance, backend) -> ChainSet:
    msgs = []
    for name, r in acceptance.items():
        r = np.atleast_1d(r)
        if np.any((r < ACCEPT_LOW) | (r > ACCEPT_HIGH)):
            msg = f"acceptance for {name} outside [{ACCEPT_LOW}, {ACCEPT_HIGH}]: {np.round(r, 3).tolist()}"
            warnings.warn(msg, RuntimeWarning, stacklevel=3)
            msgs.append(msg)
    return ChainSet(
        draws={k: np.ascontiguousarray(v) for k, v in draws.items()},
        burn_in=cfg.burn_in, seed=cfg.seed, acceptance=acceptance,
        backend=backend, warnings=tuple(msgs),
    )


def _arrays(study: StudySet):
    cur = study.current
    P0 = np.ascontiguousarray(study.prec0, dtype=float)
    y0 = np.ascontiguousarray(study.ybar0, dtype=float)
    return float(cur.precision), float(cur.ybar), P0, y0, np.ascontiguousarray(P0 * y0)


def _per_chain(gens, fn) -> np.ndarray:
    return np.ascontiguousarray(np.stack([fn(g) for g in gens]))


def _kernels(python: bool):
    return _fallback if python else _backend.kernels


def _backend_name(python: bool) -> str:
    return "python" if python else _backend.NAME


# ---------------------------------------------------------------------------
# BHM (Gibbs)
# ---------------------------------------------------------------------------


def draw_theta(prec, ybar, mu, v, z):
    """Study mean given ``mu`` and ``v``: normal with precision ``prec + 1/v``."""
    p = prec + 1.0 / v
    return (prec * ybar + mu / v) / p + z / np.sqrt(p)


def draw_mu(theta_all, v, z):
    """``mu`` given all study means (last axis) and ``v``, flat prior."""
    m = theta_all.shape[-1]
    return theta_all.mean(axis=-1) + np.sqrt(v / m) * z


def draw_v_ig(theta_all, mu, c, d, gamma_draw):
    """``v`` given study means and ``mu`` under IG(c, d).

    ``gamma_draw`` is a standard gamma variate with shape ``c + m/2``.
    """
    S = ((theta_all - np.asarray(mu)[..., None]) ** 2).sum(axis=-1)
    return (d + 0.5 * S) / gamma_draw


def log_v_conditional(x, S, m, prior_v: Prior):
    """Log density of ``x = log v`` given ``m`` study means with squared deviations ``S``."""
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = prior_v.logpdf(np.exp(x)) + (1.0 - 0.5 * m) * x - 0.5 * S * np.exp(-x)
    return np.where(np.isnan(out), -np.inf, out)


def _draw_active(gens, active, fn):
    out = np.zeros(len(gens))
    for i in np.flatnonzero(active):
        out[i] = fn(gens[i])
    return out


_SLICE_BLOCK = 12


def slice_step(x, log_target, gens, width: float = 2.0, max_steps: int = 64):
    """One stepping-out slice-sampling update per chain.

    ``x`` has one entry per generator.  Each chain draws a block of uniforms
    from its own stream (more only if the block runs out), so a chain's path
    does not depend on how the other chains progress.
    """
    n = x.size
    block = _per_chain(gens, lambda g: g.random(_SLICE_BLOCK))
    used = np.full(n, 2)
    y = log_target(x) + np.log1p(-block[:, 0])
    lo = x - width * block[:, 1]
    hi = lo + width
    for _ in range(max_steps):
        out = log_target(lo) > y
        if not out.any():
            break
        lo = np.where(out, lo - width, lo)
    for _ in range(max_steps):
        out = log_target(hi) > y
        if not out.any():
            break
        hi = np.where(out, hi + width, hi)
    new = x.copy()
    todo = np.ones(n, dtype=bool)
    rows = np.arange(n)
    for _ in range(200):
        if np.all(used[todo] < _SLICE_BLOCK):
            u = block[rows, np.minimum(used, _SLICE_BLOCK - 1)]
        else:
            u = _draw_active(gens, todo, lambda g: g.random())
        used += todo
        cand = lo + u * (hi - lo)
        ok = todo & (log_target(cand) > y)
        new = np.where(ok, cand, new)
        todo &= ~ok
        if not todo.any():
            return new
        lo = np.where(todo & (cand < x), cand, lo)
        hi = np.where(todo & (cand >= x), cand, hi)
    raise SamplerError("slice sampler did not converge onto the slice")


_SPLINE_POINTS = 8193
_SPLINE_TOL = 1e-9
_SLICE_UNIFORMS = 24
_SLICE_WIDTH = 2.0


@dataclass(frozen=True)
class LogPriorTable:
    """Cubic spline in ``x = log v`` of an induced prior's exact log density.

    ``coef`` holds scipy's piecewise-polynomial coefficients on a uniform
    grid starting at ``x0`` with step ``dx``.  ``ends`` is (value, slope) at
    the left and right table ends; beyond them the log density is extended
    linearly, which is exact for power-law tails.  The table spans the
    induced grid, which leaves less than 1e-8 of the prior mass outside.
    """

    x0: float
    dx: float
    coef: np.ndarray
    ends: np.ndarray
    max_error: float

    @classmethod
    def build(cls, prior: InducedPrior, points: int = _SPLINE_POINTS) -> "LogPriorTable":
        pts = prior.density.points
        x = np.linspace(np.log(pts[0]), np.log(pts[-1]), points)
        y = prior.logpdf(np.exp(x))
        if not np.all(np.isfinite(y)):
            raise ValueError("log prior not finite on its grid")
        sp = CubicSpline(x, y)
        mid = 0.5 * (x[1:] + x[:-1])
        err = float(np.max(np.abs(sp(mid) - prior.logpdf(np.exp(mid)))))
        d = sp.derivative()
        ends = np.array([y[0], d(x[0]), y[-1], d(x[-1])], dtype=float)
        return cls(float(x[0]), float(x[1] - x[0]), np.ascontiguousarray(sp.c), ends, err)

    def logpdf_log(self, x) -> np.ndarray:
        """Tabulated log density of ``v`` at ``x = log v``."""
        return _fallback.tab_eval(np.asarray(x, dtype=float), self.x0, self.dx, self.coef, self.ends)


def log_prior_table(prior_v: Prior) -> LogPriorTable | None:
    """Spline table for an induced prior on ``v``, or None if it is not accurate enough."""
    if not isinstance(prior_v, InducedPrior) or prior_v.side != "on_v":
        return None
    try:
        tab = LogPriorTable.build(prior_v)
    except ValueError:
        return None
    return tab if tab.max_error < _SPLINE_TOL else None


def _gibbs_slice(prec, ybar, P0, ybar0, prior_v: Prior, v_init, gens, iters):
    chains, K = len(gens), P0.size
    th = np.empty((chains, iters))
    th0 = np.empty((chains, iters, K))
    mus = np.empty((chains, iters))
    vs = np.empty((chains, iters))
    mu = np.full(chains, (ybar + ybar0.sum()) / (K + 1.0))
    v = np.array(v_init, dtype=float)
    zs = _per_chain(gens, lambda g: g.standard_normal((iters, K + 2)))
    for t in range(iters):
        z = zs[:, t]
        theta = draw_theta(prec, ybar, mu, v, z[:, 0])
        t0 = draw_theta(P0, ybar0, mu[:, None], v[:, None], z[:, 1:K + 1])
        allth = np.concatenate([theta[:, None], t0], axis=1)
        mu = draw_mu(allth, v, z[:, K + 1])
        S = ((allth - mu[:, None]) ** 2).sum(axis=1)
        x = slice_step(np.log(v), lambda x: log_v_conditional(x, S, K + 1, prior_v), gens)
        v = np.exp(x)
        if not np.all(v > 0):
            raise SamplerError("non-positive variance draw")
        th[:, t], th0[:, t], mus[:, t], vs[:, t] = theta, t0, mu, v
    return th, th0, mus, vs


def _v_start(study: StudySet, gens) -> np.ndarray:
    means = np.r_[study.current.ybar, study.ybar0]
    se2 = 1.0 / np.r_[study.current.precision, study.prec0]
    centre = max(float(means.var()), float(se2.mean()))
    return np.array([centre * np.exp(g.standard_normal()) for g in gens])


def gibbs_bhm(
    study: StudySet,
    prior_v: Prior,
    cfg: SamplerConfig = SamplerConfig(),
    python: bool = False,
) -> ChainSet:
    """Gibbs sampler for the normal BHM with a flat prior on ``mu``.

    An inverse-gamma ``prior_v`` uses the conjugate ``v`` update.  Any other
    prior on ``v`` uses slice sampling on ``log v``; induced priors are first
    tabulated as a cubic spline in ``log v`` (checked against the exact
    density to 1e-9) so the slice updates can run in the compiled kernel.

    Returns chains ``theta``, ``theta0_k``, ``mu`` and ``v``.
    """
    if prior_v.on_unit_interval:
        raise ValueError("gibbs_bhm needs a prior on v")
    prec, ybar, P0, y0, _ = _arrays(study)
    K = study.K
    gens = cfg.generators()
    v_init = _v_start(study, gens)
    it = cfg.iterations
    conjugate = isinstance(prior_v, PriorSpec) and prior_v.kind == "inverse_gamma"
    if conjugate:
        c, d = prior_v.params
        z = _per_chain(gens, lambda g: g.standard_normal((it, K + 2)))
        gam = _per_chain(gens, lambda g: g.standard_gamma(c + 0.5 * (K + 1), it))
        th, th0, mus, vs = _kernels(python).gibbs_bhm_ig(prec, ybar, P0, y0, c, d, v_init, z, gam)
        name = _backend_name(python)
    elif (tab := log_prior_table(prior_v)) is not None:
        z = _per_chain(gens, lambda g: g.standard_normal((it, K + 2)))
        u = _per_chain(gens, lambda g: g.random((it, _SLICE_UNIFORMS)))
        try:
            th, th0, mus, vs = _kernels(python).gibbs_bhm_tab(
                prec, ybar, P0, y0, tab.x0, tab.dx, tab.coef, tab.ends, v_init, z, u, _SLICE_WIDTH)
        except FloatingPointError as exc:
            raise SamplerError(str(exc)) from exc
        name = _backend_name(python)
    else:
        th, th0, mus, vs = _gibbs_slice(prec, ybar, P0, y0, prior_v, v_init, gens, it)
        name = "python"
    draws = {"theta": th}
    for k in range(K):
        draws[f"theta0_{k + 1}"] = th0[:, :, k]
    draws["mu"] = mus
    draws["v"] = vs
    return _finish(draws, cfg, {}, name)


# ---------------------------------------------------------------------------
# BNPP (collapsed Metropolis on log v)
# ---------------------------------------------------------------------------

_A0_CODES = {"uniform": 0, "beta": 1}
_V_CODES = {"inverse_gamma": 2, "half_normal": 3}


def _bnpp_prior(study: StudySet, prior: Prior):
    """Kernel prior code and parameters, or a callable log prior on ``v``."""
    spec = prior
    if (isinstance(prior, InducedPrior) and prior.side == "on_v" and prior.data_dependent
            and tuple(prior.hist) == study.historical):
        # a multi-dataset induced v-prior gives the same BNPP as its source on a0
        spec = prior.source
    if isinstance(spec, PriorSpec):
        if spec.kind in _A0_CODES:
            p = spec.params + (1.0, 1.0)
            return _A0_CODES[spec.kind], p[0], p[1], None
        if spec.kind in _V_CODES:
            p = spec.params + (1.0,)
            return _V_CODES[spec.kind], p[0], p[1], None
    P0, Y = study.prec0, study.prec0 * study.ybar0
    if prior.on_unit_interval:
        def log_prior_v(v):
            b = bridge_arrays(np.atleast_1d(v), P0, Y)
            return prior.logpdf(b["a0"], b["one_minus_a0"]) + b["log_Q"] + b["log_jacobian"] - b["log_R"]
    else:
        def log_prior_v(v):
            return prior.logpdf(v)
    return 2, 1.0, 1.0, log_prior_v


def mwg_bnpp(
    study: StudySet,
    prior: Prior,
    cfg: SamplerConfig = SamplerConfig(),
    python: bool = False,
) -> ChainSet:
    """Metropolis-within-Gibbs for the BNPP.

    ``theta`` is integrated out of the ``log v`` target, updated by random-walk
    Metropolis, and then drawn exactly from its normal conditional.  ``prior``
    is on the global weight ``a0`` (uniform or beta) or on ``v``.

    Returns chains ``theta``, ``v``, ``a0`` and ``a0_k``.
    """
    prec, ybar, P0, _, Y = _arrays(study)
    code, p1, p2, log_prior_v = _bnpp_prior(study, prior)
    gens = cfg.generators()
    it = cfg.iterations
    v_mid = 1.0 / P0.mean()
    x_init = np.array([np.log(v_mid) + g.standard_normal() for g in gens])
    ls0 = np.full(cfg.chains, np.log(cfg.proposal_scale))
    z = _per_chain(gens, lambda g: g.standard_normal((it, 2)))
    logu = _per_chain(gens, lambda g: np.log(g.random(it)))
    if log_prior_v is None:
        mod, name = _kernels(python), _backend_name(python)
        xs, th, acc, _ = mod.mwg_bnpp(prec, ybar, P0, Y, code, p1, p2, cfg.target_accept,
                                      cfg.burn_in, x_init, ls0, z, logu)
    else:
        name = "python"
        xs, th, acc, _ = _fallback.mwg_bnpp(prec, ybar, P0, Y, code, p1, p2, cfg.target_accept,
                                            cfg.burn_in, x_init, ls0, z, logu, log_prior_v)
    v = np.exp(xs)
    b = bridge_arrays(v.ravel(), P0, Y)
    draws = {"theta": th, "v": v, "a0": b["a0"].reshape(v.shape)}
    a0k = b["c"] * b["a0"][:, None]
    for k in range(study.K):
        draws[f"a0_{k + 1}"] = a0k[:, k].reshape(v.shape)
    kept = cfg.iterations - cfg.burn_in
    return _finish(draws, cfg, {"v": acc / kept}, name)


# ---------------------------------------------------------------------------
# iNPP (collapsed coordinate-wise Metropolis on logit a0k)
# ---------------------------------------------------------------------------


def _inpp_priors(study: StudySet, priors):
    if isinstance(priors, (PriorSpec, InducedPrior)):
        priors = [priors] * study.K
    priors = list(priors)
    if len(priors) != study.K:
        raise ValueError(f"expected {study.K} priors, got {len(priors)}")
    if not all(p.on_unit_interval for p in priors):
        raise ValueError("iNPP priors must be on (0, 1)")
    coded = all(isinstance(p, PriorSpec) and p.kind in _A0_CODES for p in priors)
    if not coded:
        return None, None, None, [p.logpdf for p in priors]
    codes = np.array([_A0_CODES[p.kind] for p in priors], dtype=np.intc)
    p1 = np.array([(p.params + (1.0,))[0] for p in priors])
    p2 = np.array([(p.params + (1.0, 1.0))[1] for p in priors])
    return codes, p1, p2, None


def mwg_inpp(
    study: StudySet,
    priors_a0,
    cfg: SamplerConfig = SamplerConfig(),
    python: bool = False,
) -> ChainSet:
    """Metropolis-within-Gibbs for the iNPP.

    Each ``a0k`` is updated by random-walk Metropolis on its logit with
    ``theta`` integrated out (the normalizing constant ``c(a0)`` is evaluated
    at every proposal); ``theta`` is then drawn from its normal conditional.

    Returns chains ``theta`` and ``a0_k``.
    """
    prec, ybar, P0, _, Y = _arrays(study)
    K = study.K
    codes, p1, p2, log_priors = _inpp_priors(study, priors_a0)
    gens = cfg.generators()
    it = cfg.iterations
    y_init = _per_chain(gens, lambda g: g.standard_normal(K))
    ls0 = np.full((cfg.chains, K), np.log(cfg.proposal_scale))
    z = _per_chain(gens, lambda g: g.standard_normal((it, K + 1)))
    logu = _per_chain(gens, lambda g: np.log(g.random((it, K))))
    if log_priors is None:
        mod, name = _kernels(python), _backend_name(python)
        ws, th, acc, _ = mod.mwg_inpp(prec, ybar, P0, Y, codes, p1, p2, cfg.target_accept,
                                      cfg.burn_in, y_init, ls0, z, logu)
    else:
        name = "python"
        zeros = np.zeros(K)
        ws, th, acc, _ = _fallback.mwg_inpp(prec, ybar, P0, Y, np.zeros(K, dtype=np.intc), zeros,
                                            zeros, cfg.target_accept, cfg.burn_in, y_init, ls0,
                                            z, logu, log_priors)
    draws = {"theta": th}
    for k in range(K):
        draws[f"a0_{k + 1}"] = ws[:, :, k]
    kept = cfg.iterations - cfg.burn_in
    return _finish(draws, cfg, {f"a0_{k + 1}": acc[:, k] / kept for k in range(K)}, name)


# ---------------------------------------------------------------------------
# Bernoulli-likelihood BHM on log odds ratios
# ---------------------------------------------------------------------------


def _binom_loglik(y, n, eta):
    """Bernoulli log likelihood of ``y`` successes in ``n`` trials at logit ``eta``."""
    return y * eta - n * np.logaddexp(0.0, eta)


def mh_bernoulli_bhm(
    trials: Sequence[TwoArmBinomialSummary],
    prior_v: Prior,
    cfg: SamplerConfig = SamplerConfig(),
    use_data: bool = True,
) -> ChainSet:
    """BHM on study log odds ratios with exact binomial likelihoods.

    Study ``j`` has control logit ``alpha_j`` (flat prior) and treatment logit
    ``alpha_j + theta_j``; ``theta_j ~ N(mu, v)`` with a flat prior on ``mu``.
    The first trial is the current study.  ``alpha`` and ``theta`` get
    random-walk updates plus a joint move ``(alpha + d, theta - d)`` that keeps
    the treatment logit fixed; ``mu`` is Gibbs; ``v`` is conjugate under an
    inverse-gamma prior and a random walk on ``log v`` otherwise.

    ``use_data=False`` drops the likelihood (prior-only run).

    Returns chains ``theta`` (current study), ``theta0_k``, ``mu`` and ``v``.
    """
    if prior_v.on_unit_interval:
        raise ValueError("mh_bernoulli_bhm needs a prior on v")
    trials = list(trials)
    for tr in trials:
        if tr.has_zero_cell:
            raise ValueError(f"zero cell in {tr}; the Bernoulli BHM requires each arm to have "
                             "at least one success and one failure")
    m = len(trials)
    nt = np.array([t.n_t for t in trials], dtype=float)
    yt = np.array([t.y_t for t in trials], dtype=float)
    nc = np.array([t.n_c for t in trials], dtype=float)
    yc = np.array([t.y_c for t in trials], dtype=float)
    w = 1.0 if use_data else 0.0
    conjugate = isinstance(prior_v, PriorSpec) and prior_v.kind == "inverse_gamma"

    gens = cfg.generators()
    C, it, burn, target = cfg.chains, cfg.iterations, cfg.burn_in, cfg.target_accept
    alpha = np.log(yc / (nc - yc)) + _per_chain(gens, lambda g: 0.1 * g.standard_normal(m))
    theta = (np.log(yt / (nt - yt)) - np.log(yc / (nc - yc))
             + _per_chain(gens, lambda g: 0.1 * g.standard_normal(m)))
    mu = theta.mean(axis=1)
    v = np.full(C, max(float(theta[0].var()), 0.01))
    ls = np.full((3, C, m), np.log(0.1))
    ls_v = np.full(C, 0.0)

    def loglik(a, th):
        return w * (_binom_loglik(yc, nc, a) + _binom_loglik(yt, nt, a + th))

    out_th = np.empty((C, it, m))
    out_mu = np.empty((C, it))
    out_v = np.empty((C, it))
    acc = np.zeros((3, C, m))
    acc_v = np.zeros(C)
    rm = lambda t: (t + 1.0) ** -0.6  # noqa: E731
    for t in range(it):
        z = _per_chain(gens, lambda g: g.standard_normal((4, m)))
        lu = _per_chain(gens, lambda g: np.log(g.random((4, m))))
        z, lu = z.transpose(1, 0, 2), lu.transpose(1, 0, 2)
        ll = loglik(alpha, theta)
        lprior = -0.5 * (theta - mu[:, None]) ** 2 / v[:, None]
        for j, (da, dt) in enumerate(((1.0, 0.0), (0.0, 1.0), (1.0, -1.0))):
            step = np.exp(ls[j]) * z[j]
            a_new, t_new = alpha + da * step, theta + dt * step
            ll_new = loglik(a_new, t_new)
            lp_new = -0.5 * (t_new - mu[:, None]) ** 2 / v[:, None]
            logr = ll_new + lp_new - ll - lprior
            if np.any(np.isnan(logr)):
                raise SamplerError("log target is NaN")
            take = lu[j] < logr
            alpha = np.where(take, a_new, alpha)
            theta = np.where(take, t_new, theta)
            ll = np.where(take, ll_new, ll)
            lprior = np.where(take, lp_new, lprior)
            if t < burn:
                a = np.exp(np.minimum(logr, 0.0))
                ls[j] = np.clip(ls[j] + (a - target) * rm(t), -_LOG_SCALE_CLIP, _LOG_SCALE_CLIP)
            else:
                acc[j] += take
        mu = draw_mu(theta, v, z[3, :, 0])
        S = ((theta - mu[:, None]) ** 2).sum(axis=1)
        if conjugate:
            c, d = prior_v.params
            gam = np.array([g.standard_gamma(c + 0.5 * m) for g in gens])
            v = (d + 0.5 * S) / gam
        else:
            x = np.log(v)
            xp = x + np.exp(ls_v) * z[3, :, 1]
            logr = log_v_conditional(xp, S, m, prior_v) - log_v_conditional(x, S, m, prior_v)
            take = lu[3, :, 0] < logr
            x = np.where(take, xp, x)
            v = np.exp(x)
            if t < burn:
                a = np.exp(np.minimum(logr, 0.0))
                ls_v = np.clip(ls_v + (a - target) * rm(t), -_LOG_SCALE_CLIP, _LOG_SCALE_CLIP)
            else:
                acc_v += take
        if not np.all(v > 0):
            raise SamplerError("non-positive variance draw")
        out_th[:, t] = theta
        out_mu[:, t] = mu
        out_v[:, t] = v
    kept = it - burn
    draws = {"theta": out_th[:, :, 0]}
    for k in range(1, m):
        draws[f"theta0_{k}"] = out_th[:, :, k]
    draws["mu"] = out_mu
    draws["v"] = out_v
    acceptance = {"theta": acc[1, :, 0] / kept}
    if not conjugate:
        acceptance["v"] = acc_v / kept
    return _finish(draws, cfg, acceptance, "python")


def bernoulli_log_posterior(alpha, theta, mu, v, trials, prior_v: Prior) -> float:
    """Unnormalized log joint of the Bernoulli BHM (for tests and diagnostics)."""
    tr = list(trials)
    nt = np.array([t.n_t for t in tr], float)
    yt = np.array([t.y_t for t in tr], float)
    nc = np.array([t.n_c for t in tr], float)
    yc = np.array([t.y_c for t in tr], float)
    alpha, theta = np.asarray(alpha, float), np.asarray(theta, float)
    ll = _binom_loglik(yc, nc, alpha) + _binom_loglik(yt, nt, alpha + theta)
    lp = -0.5 * (theta - mu) ** 2 / v - 0.5 * np.log(2 * np.pi * v)
    return float(ll.sum() + lp.sum() + prior_v.logpdf(v))
