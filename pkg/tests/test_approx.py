import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nppbridge.approx import (
    SYNTHETIC_LUPUS,
    LogOrApprox,
    TwoArmBinomialSummary,
    ZeroCellError,
    log_or,
    to_normal_summary,
    trial_summary,
)
from nppbridge.core import PriorSpec, StudySet
from nppbridge.posterior import marginal_a0k
from nppbridge.transform import f_single


def test_symmetric_trial():
    r = log_or(TwoArmBinomialSummary(100, 50, 100, 50))
    assert r.theta_hat == 0.0
    assert r.var_hat == pytest.approx(0.08)


def test_worked_example():
    r = log_or(TwoArmBinomialSummary(50, 30, 50, 20))
    assert r.theta_hat == pytest.approx(math.log(1.5 / (20 / 30)))
    assert r.var_hat == pytest.approx(1 / 30 + 1 / 20 + 1 / 20 + 1 / 30)


def test_zero_cells():
    t = TwoArmBinomialSummary(20, 0, 20, 5)
    assert t.has_zero_cell
    with pytest.raises(ZeroCellError, match="continuity"):
        log_or(t)
    r = log_or(t, continuity=0.5)
    assert r.theta_hat == pytest.approx(math.log(0.5 / 20.5) - math.log(5.5 / 15.5))
    with pytest.raises(ValueError):
        log_or(t, continuity=-1)


@pytest.mark.parametrize("args", [(0, 0, 5, 1), (5, 6, 5, 1), (5, 1.5, 5, 1), (5, True, 5, 1)])
def test_summary_validation(args):
    with pytest.raises(ValueError):
        TwoArmBinomialSummary(*args)


def test_approx_validation():
    with pytest.raises(ValueError):
        LogOrApprox(0.0, 0.0)
    with pytest.raises(ValueError):
        LogOrApprox(0.0, float("inf"))


trials = st.integers(2, 400).flatmap(
    lambda nt: st.integers(2, 400).flatmap(
        lambda nc: st.tuples(st.just(nt), st.integers(1, nt - 1), st.just(nc), st.integers(1, nc - 1))
    )
)


@given(trials)
def test_swap_antisymmetry(t):
    tr = TwoArmBinomialSummary(*t)
    a, b = log_or(tr), log_or(tr.swapped())
    assert a.theta_hat == pytest.approx(-b.theta_hat, abs=1e-12)
    assert a.var_hat == pytest.approx(b.var_hat, rel=1e-12)


@given(trials)
def test_variance_lower_bound(t):
    tr = TwoArmBinomialSummary(*t)
    assert log_or(tr).var_hat >= 4 / tr.n_t + 4 / tr.n_c - 1e-12


def test_variance_matches_parametric_bootstrap():
    rng = np.random.default_rng(5)
    nt, nc, pt, pc = 400, 500, 0.35, 0.55
    yt, yc = rng.binomial(nt, pt, 400_000), rng.binomial(nc, pc, 400_000)
    ok = (yt > 0) & (yt < nt) & (yc > 0) & (yc < nc)
    th = np.log(yt[ok] / (nt - yt[ok])) - np.log(yc[ok] / (nc - yc[ok]))
    expected = 1 / (nt * pt * (1 - pt)) + 1 / (nc * pc * (1 - pc))
    assert th.var() == pytest.approx(expected, rel=0.05)
    r = log_or(TwoArmBinomialSummary(nt, round(nt * pt), nc, round(nc * pc)))
    assert r.var_hat == pytest.approx(expected, rel=0.05)


def test_normal_summary_packaging():
    r = log_or(TwoArmBinomialSummary(50, 30, 50, 20))
    s = to_normal_summary(r)
    assert (s.n, s.ybar, s.sigma2) == (1, r.theta_hat, r.var_hat)
    assert s.precision == pytest.approx(1 / r.var_hat)
    assert f_single(0.3, s) == pytest.approx(1 / (2 * 0.3 / r.var_hat + 1))
    assert trial_summary(TwoArmBinomialSummary(50, 30, 50, 20)) == s


def test_identical_trials_give_full_borrowing_weights():
    t = TwoArmBinomialSummary(300, 150, 300, 120)
    s = StudySet(trial_summary(t), (trial_summary(t), trial_summary(t)))
    for g in marginal_a0k(s, "bnpp", PriorSpec.uniform01()):
        assert g.points[np.argmax(g.density)] > 0.99


def test_synthetic_lupus_counts_are_valid():
    assert [t.n_t for t in SYNTHETIC_LUPUS] == [52, 274, 288]
    for t in SYNTHETIC_LUPUS:
        assert not t.has_zero_cell
        assert TwoArmBinomialSummary.from_dict(t.to_dict()) == t
