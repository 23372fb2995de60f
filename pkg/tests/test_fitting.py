import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nppbridge.core import DensityGrid, NormalSummary, PriorSpec, normalize
from nppbridge.fitting import (
    BetaFit,
    FitError,
    IgFit,
    beta_moments_start,
    fit_beta_mle,
    fit_ig_kl,
    ig_moments,
    kl_divergence,
    truncate_grid,
)
from nppbridge.transform import induce_prior_a0_single, induce_prior_v_single

UNIT = NormalSummary(1, 0.0, 1.0)


def ig_grid(c, d, points=20001):
    v = np.geomspace(d / 1000, d * 1e14, points)
    return normalize(DensityGrid(v, PriorSpec.inverse_gamma(c, d).pdf(v)))


# --- KL -------------------------------------------------------------------

def test_kl_normal_examples():
    x = np.linspace(-15, 15, 30001)
    p = DensityGrid(x, stats.norm.pdf(x), normalized=True)
    assert kl_divergence(p, lambda t: stats.norm.pdf(t, 1.0)) == pytest.approx(0.5, abs=1e-8)
    # log 2 + 1/8 - 1/2
    assert kl_divergence(p, lambda t: stats.norm.pdf(t, 0, 2)) == pytest.approx(0.3181472, abs=1e-6)
    assert kl_divergence(p, stats.norm.logpdf, log=True) == pytest.approx(0.0, abs=1e-10)


@given(st.floats(-2, 2), st.floats(0.3, 3))
def test_kl_nonnegative(mu, s):
    x = np.linspace(-12, 12, 4001)
    p = normalize(DensityGrid(x, stats.norm.pdf(x)))
    assert kl_divergence(p, lambda t: stats.norm.logpdf(t, mu, s), log=True) >= -1e-10


def test_kl_errors():
    x = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        kl_divergence(DensityGrid(x, np.ones_like(x) * 2), lambda t: np.ones_like(t))
    p = DensityGrid(x, np.ones_like(x), normalized=True)
    with pytest.raises(ValueError, match="infinite"):
        kl_divergence(p, lambda t: np.where(t < 0.5, 1.0, 0.0))


# --- inverse gamma ----------------------------------------------------------

@pytest.mark.parametrize("c,d", [(3.0, 1.0), (0.5, 50.0), (20.0, 0.01), (2.0, 7.0)])
def test_ig_fixed_point(c, d):
    f = fit_ig_kl(ig_grid(c, d))
    assert f.c == pytest.approx(c, rel=1e-4)
    assert f.d == pytest.approx(d, rel=1e-4)
    assert f.kl < 1e-6


@settings(max_examples=15)
@given(st.floats(math.log(0.5), math.log(20)), st.floats(math.log(0.01), math.log(50)))
def test_ig_fixed_point_property(lc, ld):
    c, d = math.exp(lc), math.exp(ld)
    f = fit_ig_kl(ig_grid(c, d, 8001))
    assert f.c == pytest.approx(c, rel=1e-3)
    assert f.d == pytest.approx(d, rel=1e-3)


def test_ig_moments_match_closed_form():
    c, d = 4.0, 2.5
    inv, lg = ig_moments(ig_grid(c, d))
    assert inv == pytest.approx(c / d, rel=1e-8)
    assert lg == pytest.approx(math.log(d) - float(__import__("scipy").special.digamma(c)), abs=1e-8)


@pytest.mark.parametrize("a,b", [(2, 2), (10, 2), (2, 10)])
def test_ig_fit_is_kl_optimal(a, b):
    target = induce_prior_v_single(PriorSpec.beta(a, b), UNIT)
    f = fit_ig_kl(target)
    for dc, dd in [(1.01, 1), (0.99, 1), (1, 1.01), (1, 0.99), (1.01, 1.01), (0.99, 0.99)]:
        q = PriorSpec.inverse_gamma(f.c * dc, f.d * dd)
        assert kl_divergence(target.density, q.logpdf, log=True) > f.kl


def test_ig_fits_order_by_borrowing():
    # a0 near 1 means v near 0
    strong = fit_ig_kl(induce_prior_v_single(PriorSpec.beta(10, 2), UNIT))
    weak = fit_ig_kl(induce_prior_v_single(PriorSpec.beta(2, 10), UNIT))
    for q in (0.1, 0.5, 0.9):
        assert stats.invgamma(strong.c, scale=strong.d).ppf(q) < stats.invgamma(weak.c, scale=weak.d).ppf(q)


def test_ig_fit_rejects_divergent_inverse_moment():
    # uniform a0 gives a flat density at v = 0, so E[1/v] is infinite
    target = induce_prior_v_single(PriorSpec.uniform01(), UNIT)
    with pytest.raises(FitError, match="E\\[1/v\\]"):
        fit_ig_kl(target)
    f = fit_ig_kl(target, truncate=(0.005, 0.995))
    assert isinstance(f, IgFit) and f.kl > 0


def test_ig_fit_rejects_a0_side_and_unnormalized():
    with pytest.raises(FitError):
        fit_ig_kl(induce_prior_a0_single(PriorSpec.inverse_gamma(3, 1), UNIT))
    v = np.geomspace(1e-3, 1e3, 101)
    with pytest.raises(FitError):
        fit_ig_kl(DensityGrid(v, 5 * PriorSpec.inverse_gamma(3, 1).pdf(v)))


def test_truncate_grid_renormalizes():
    g = truncate_grid(ig_grid(3, 1), 0.1, 0.9)
    assert g.integral() == pytest.approx(1.0, abs=1e-12)
    assert g.points[0] >= stats.invgamma(3, scale=1).ppf(0.1) * (1 - 1e-3)


# --- beta -------------------------------------------------------------------

def test_beta_moments_start_uniform():
    a, b = beta_moments_start(0.5, 1 / 12)
    assert (a, b) == pytest.approx((1.0, 1.0))
    with pytest.raises(FitError):
        beta_moments_start(0.5, 0.3)


def test_beta_mle_recovers_parameters():
    x = np.random.default_rng(1).beta(2, 2, 1_000_000)
    f = fit_beta_mle(x)
    assert 1.98 <= f.alpha <= 2.02 and 1.98 <= f.beta <= 2.02
    assert f.mean == pytest.approx(0.5, abs=2e-3)
    assert f.loglik == pytest.approx(float(stats.beta(f.alpha, f.beta).logpdf(x).mean()), rel=1e-10)


def test_beta_mle_is_stationary_point():
    x = np.random.default_rng(2).beta(0.7, 3.0, 5000)
    f = fit_beta_mle(x)
    ref = stats.beta.fit(x, floc=0, fscale=1)
    assert f.alpha == pytest.approx(ref[0], rel=1e-4)
    assert f.beta == pytest.approx(ref[1], rel=1e-4)


def test_beta_mle_error_rate():
    rng = np.random.default_rng(3)
    sizes = np.array([500, 2000, 8000, 32000])
    rmse = []
    for n in sizes:
        errs = [fit_beta_mle(rng.beta(2, 5, n)).alpha - 2 for _ in range(40)]
        rmse.append(math.sqrt(np.mean(np.square(errs))))
    slope = np.polyfit(np.log(sizes), np.log(rmse), 1)[0]
    assert -0.65 <= slope <= -0.35


@pytest.mark.parametrize("bad", [np.full(50, 0.5), np.r_[np.full(200, 0.5), 1.0], np.r_[np.full(200, 0.5), np.nan], np.full(200, 0.5)])
def test_beta_mle_errors(bad):
    with pytest.raises(FitError):
        fit_beta_mle(bad)


def test_fit_dataclasses_validate():
    with pytest.raises(ValueError):
        IgFit(-1, 1, 0)
    with pytest.raises(ValueError):
        BetaFit(1, 0, 0)
    assert BetaFit(2, 3, -1.0).to_dict()["alpha"] == 2
