import csv
import warnings

import numpy as np
import pytest

from nppbridge import _backend, mcmc
from nppbridge import posterior as post
from nppbridge.approx import TwoArmBinomialSummary, trial_summary
from nppbridge.core import NormalSummary, PriorSpec, StudySet, ks_sample_vs_grid
from nppbridge.diagnostics import DiagnosticsError, diagnose, ess_bulk, split_rhat
from nppbridge.transform import induce_prior_v_multi, induce_prior_v_single

compiled = pytest.mark.skipif(_backend.NAME != "compiled", reason="compiled kernels not built")

CFG = mcmc.SamplerConfig(chains=4, iterations=10_000, burn_in=2_000, seed=99)
SMALL = mcmc.SamplerConfig(chains=2, iterations=600, burn_in=100, seed=5)
U = PriorSpec.uniform01()
B22 = PriorSpec.beta(2, 2)


def sim(ybar0, n0, ybar=0.0, n=30):
    return StudySet(NormalSummary(n, ybar, 1.0), tuple(NormalSummary(m, y, 1.0) for y, m in zip(ybar0, n0)))


# --- configuration and bookkeeping ---------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(chains=1), dict(burn_in=0), dict(burn_in=10_000), dict(proposal_scale=0.0),
    dict(target_accept=0.9), dict(seed=-1),
])
def test_sampler_config_validation(kw):
    with pytest.raises(ValueError):
        mcmc.SamplerConfig(**kw)


def test_sampler_config_presets_and_round_trip():
    a1 = mcmc.SamplerConfig.preset("fig_a1")
    assert (a1.chains, a1.iterations, a1.burn_in) == (4, 10_000, 5_000)
    a2 = mcmc.SamplerConfig.preset("fig_a2", seed=3)
    assert (a2.iterations, a2.burn_in, a2.seed) == (8_000, 4_000, 3)
    assert mcmc.SamplerConfig.from_dict(a2.to_dict()) == a2
    with pytest.raises(ValueError):
        mcmc.SamplerConfig.preset("nope")


def test_chain_streams_are_independent_and_reproducible():
    g1, g2 = SMALL.generators(), SMALL.generators()
    assert g1[0].random() == g2[0].random()
    assert g1[0].random() != g1[1].random()


@pytest.mark.parametrize("run", [
    lambda cfg, py: mcmc.mwg_bnpp(sim([0.3, 0.8], [30, 60]), B22, cfg, python=py),
    lambda cfg, py: mcmc.mwg_inpp(sim([0.3, 0.8], [30, 60]), [B22, U], cfg, python=py),
    lambda cfg, py: mcmc.gibbs_bhm(sim([0.3, 0.8], [30, 60]), PriorSpec.inverse_gamma(2, 1), cfg, python=py),
    lambda cfg, py: mcmc.gibbs_bhm(sim([0.3, 0.8], [30, 60]),
                                   induce_prior_v_multi(B22, sim([0.3, 0.8], [30, 60])), cfg, python=py),
])
def test_seed_determinism(run):
    a, b = run(SMALL, False), run(SMALL, False)
    for k in a.draws:
        np.testing.assert_array_equal(a.draws[k], b.draws[k])
    c = run(mcmc.SamplerConfig(chains=2, iterations=600, burn_in=100, seed=6), False)
    assert not np.array_equal(a.draws["theta"], c.draws["theta"])


@compiled
@pytest.mark.parametrize("run", [
    lambda py: mcmc.mwg_bnpp(sim([0.3, 0.8], [30, 60]), B22, SMALL, python=py),
    lambda py: mcmc.mwg_bnpp(sim([0.3, 0.8], [30, 60]), PriorSpec.inverse_gamma(2, 1), SMALL, python=py),
    lambda py: mcmc.mwg_bnpp(sim([0.3, 0.8], [30, 60]), PriorSpec.half_normal(1.0), SMALL, python=py),
    lambda py: mcmc.mwg_inpp(sim([0.3, 0.8, -0.2], [30, 60, 10]), [B22, U, B22], SMALL, python=py),
    lambda py: mcmc.gibbs_bhm(sim([0.3, 0.8], [30, 60]), PriorSpec.inverse_gamma(2, 1), SMALL, python=py),
    lambda py: mcmc.gibbs_bhm(sim([0.3], [30]), induce_prior_v_single(B22, NormalSummary(30, 0.3, 1.0)),
                              SMALL, python=py),
])
def test_backend_parity(run):
    a, b = run(False), run(True)
    assert a.backend == "compiled" and b.backend == "python"
    for k in a.draws:
        np.testing.assert_allclose(a.draws[k], b.draws[k], rtol=1e-9, atol=1e-12)


def test_chainset_shapes_and_csv(tmp_path):
    ch = mcmc.mwg_bnpp(sim([0.3, 0.8], [30, 60]), U, SMALL)
    assert ch.names == ["theta", "v", "a0", "a0_1", "a0_2"]
    assert ch.kept("theta").shape == (2, 500)
    assert ch.pooled("theta").shape == (1000,)
    with pytest.raises(ValueError):
        ch.draws["theta"][0, 0] = 1.0
    path = tmp_path / "draws.csv"
    ch.write_long_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["chain", "iter", "parameter", "value"]
    assert len(rows) == 1 + 5 * 1000
    assert rows[1][:3] == ["0", "100", "theta"]
    assert float(rows[1][3]) == ch.kept("theta")[0, 0]
    with pytest.raises(ValueError):
        mcmc.ChainSet({"a": np.zeros((2, 5)), "b": np.zeros((2, 6))}, 1, 0)


# --- agreement with quadrature --------------------------------------------------

def test_bnpp_sampler_matches_quadrature():
    s = sim([0.2, 0.9], [30, 60])
    ch = mcmc.mwg_bnpp(s, U, CFG)
    assert ks_sample_vs_grid(ch.pooled("theta"), post.marginal_theta_bnpp(s, U)) < 0.015
    for k, g in enumerate(post.marginal_a0k(s, "bnpp", U)):
        assert ks_sample_vs_grid(ch.pooled(f"a0_{k + 1}"), g) < 0.02


def test_inpp_sampler_matches_quadrature():
    s = sim([0.2, 0.9], [30, 60])
    ch = mcmc.mwg_inpp(s, U, CFG)
    assert ks_sample_vs_grid(ch.pooled("theta"), post.marginal_theta_inpp(s, U)) < 0.015
    for k, g in enumerate(post.marginal_a0k(s, "inpp", U)):
        assert ks_sample_vs_grid(ch.pooled(f"a0_{k + 1}"), g) < 0.02


def test_inpp_single_dataset_matches_npp(fig_a1):
    ch = mcmc.mwg_inpp(fig_a1, B22, CFG)
    assert ks_sample_vs_grid(ch.pooled("theta"), post.marginal_theta_npp_single(fig_a1, B22)) < 0.015
    assert ks_sample_vs_grid(ch.pooled("a0_1"), post.marginal_a0_npp_single(fig_a1, B22)) < 0.02


def test_gibbs_conjugate_matches_quadrature(fig_a2):
    pv = PriorSpec.inverse_gamma(2, 1)
    ch = mcmc.gibbs_bhm(fig_a2, pv, CFG)
    assert ks_sample_vs_grid(ch.pooled("theta"), post.marginal_theta_bhm_multi(fig_a2, pv)) < 0.015


def test_gibbs_induced_prior_matches_bnpp(fig_a2):
    ch = mcmc.gibbs_bhm(fig_a2, induce_prior_v_multi(B22, fig_a2), mcmc.SamplerConfig.preset("fig_a2", seed=17))
    assert ks_sample_vs_grid(ch.pooled("theta"), post.marginal_theta_bnpp(fig_a2, B22)) < 0.02


def test_gibbs_half_normal_prior_uses_slice_path(fig_a1):
    pv = PriorSpec.half_normal(0.5)
    cfg = mcmc.SamplerConfig(chains=2, iterations=3000, burn_in=500, seed=2)
    ch = mcmc.gibbs_bhm(fig_a1, pv, cfg)
    assert ch.backend == "python"
    assert ks_sample_vs_grid(ch.pooled("theta"), post.marginal_theta_bhm_single(fig_a1, pv)) < 0.04


def test_log_prior_table_accuracy(fig_a2):
    ip = induce_prior_v_multi(B22, fig_a2)
    tab = mcmc.log_prior_table(ip)
    assert tab is not None and tab.max_error < 1e-9
    x = np.linspace(tab.x0, tab.x0 + tab.coef.shape[1] * tab.dx, 1001)[1:-1]
    np.testing.assert_allclose(tab.logpdf_log(x), ip.logpdf(np.exp(x)), atol=1e-9)
    assert mcmc.log_prior_table(PriorSpec.inverse_gamma(2, 1)) is None


def test_compatible_scenario_borrows_strongly():
    s = sim([0.0, 0.0], [30, 60])
    ch = mcmc.mwg_inpp(s, U, CFG)
    for k in (1, 2):
        assert np.mean(ch.pooled(f"a0_{k}") > 0.5) > 0.5


def test_priors_concentrated_near_one_give_full_borrowing():
    s = sim([0.5, -0.5], [30, 60])
    ch = mcmc.mwg_inpp(s, PriorSpec.beta(2000, 1), CFG)
    pooled = post.fixed_weight_posterior(s, 1.0)
    assert ch.pooled("theta").mean() == pytest.approx(pooled.mean(), abs=0.01)
    assert ch.pooled("theta").std() == pytest.approx(pooled.sd(), rel=0.05)


def test_inpp_exchangeable_under_permutation():
    s = sim([0.4, -0.3, 0.1], [20, 40, 30])
    a = mcmc.mwg_inpp(s, U, CFG)
    b = mcmc.mwg_inpp(s.permuted([2, 0, 1]), U, CFG)
    from scipy import stats
    assert stats.ks_2samp(a.pooled("theta")[::10], b.pooled("theta")[::10]).statistic < 0.05
    assert stats.ks_2samp(a.pooled("a0_1")[::10], b.pooled("a0_2")[::10]).statistic < 0.05


def test_sampler_input_errors(fig_a2):
    with pytest.raises(ValueError):
        mcmc.gibbs_bhm(fig_a2, U, SMALL)
    with pytest.raises(ValueError):
        mcmc.mwg_inpp(fig_a2, [U, U], SMALL)
    with pytest.raises(ValueError):
        mcmc.mwg_inpp(fig_a2, PriorSpec.inverse_gamma(1, 1), SMALL)


# --- Bernoulli BHM ------------------------------------------------------------

TRIALS = [TwoArmBinomialSummary(300, 160, 300, 120), TwoArmBinomialSummary(280, 140, 290, 110),
          TwoArmBinomialSummary(250, 130, 260, 100)]


@pytest.mark.slow
def test_bernoulli_prior_only_recovers_v_prior():
    pv = PriorSpec.inverse_gamma(3, 2)
    cfg = mcmc.SamplerConfig(chains=4, iterations=6000, burn_in=1000, seed=8)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ch = mcmc.mh_bernoulli_bhm(TRIALS, pv, cfg, use_data=False)
    from scipy import stats
    assert stats.kstest(ch.pooled("v"), stats.invgamma(3, scale=2).cdf).statistic < 0.02


@pytest.mark.slow
def test_bernoulli_close_to_normal_approximation():
    pv = PriorSpec.inverse_gamma(2, 0.05)
    cfg = mcmc.SamplerConfig(chains=4, iterations=6000, burn_in=1500, seed=9)
    ch = mcmc.mh_bernoulli_bhm(TRIALS, pv, cfg)
    s = StudySet(trial_summary(TRIALS[0]), tuple(trial_summary(t) for t in TRIALS[1:]))
    g = post.marginal_theta_bhm_multi(s, pv)
    assert ch.pooled("theta").mean() == pytest.approx(g.mean(), abs=0.03)
    assert ks_sample_vs_grid(ch.pooled("theta"), g) < 0.05


def test_bernoulli_input_errors():
    with pytest.raises(ValueError, match="zero cell"):
        mcmc.mh_bernoulli_bhm([TwoArmBinomialSummary(10, 0, 10, 3)] * 2, PriorSpec.inverse_gamma(2, 1), SMALL)
    with pytest.raises(ValueError):
        mcmc.mh_bernoulli_bhm(TRIALS, U, SMALL)


# --- diagnostics --------------------------------------------------------------

def test_iid_chains_diagnose_as_mixed():
    x = np.random.default_rng(1).standard_normal((4, 5000))
    assert abs(split_rhat(x) - 1.0) < 0.01
    assert ess_bulk(x) >= 0.8 * x.size


def test_stuck_chains_flagged():
    x = np.repeat(np.arange(4.0)[:, None], 1000, axis=1)
    x = x + 1e-3 * np.random.default_rng(2).standard_normal(x.shape)
    assert split_rhat(x) > 1.1


def test_ar1_ess_matches_theory():
    rng = np.random.default_rng(3)
    phi, n = 0.9, 50_000
    e = rng.standard_normal((4, n))
    x = np.empty_like(e)
    x[:, 0] = e[:, 0] / np.sqrt(1 - phi**2)
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + e[:, t]
    ratio = ess_bulk(x) / x.size
    assert ratio == pytest.approx((1 - phi) / (1 + phi), rel=0.5)


def test_diagnostics_input_checks():
    with pytest.raises(DiagnosticsError):
        diagnose(np.zeros((1, 500)))
    with pytest.raises(DiagnosticsError):
        diagnose(np.zeros((4, 50)))
    d = diagnose(np.random.default_rng(4).standard_normal((2, 400)))
    assert d.mcse > 0 and set(d.to_dict()) == {"ess", "split_rhat", "mcse"}
