import json

import numpy as np
import pytest

from nppbridge import approx, mcmc, scenarios
from nppbridge.core import NormalSummary, PriorSpec, StudySet
from nppbridge.scenarios import (
    FIGURES,
    SCENARIO_PRESETS,
    ConfigError,
    ScenarioConfig,
    emit_figure_data,
    equivalence_pair,
    load_config,
    public,
    random_study,
    run_equivalence,
    run_scenario,
)


def test_fig3_top_full_borrowing():
    rep = run_scenario(SCENARIO_PRESETS["fig3_top"])
    ref_sd = rep["comparison"]["theta_sd"]["a0=0"]
    assert ref_sd == pytest.approx(np.sqrt(1 / 30), rel=1e-6)
    for m in ("bnpp", "inpp"):
        assert all(a["mode"] > 0.99 for a in rep["models"][m]["a0"])
        assert rep["comparison"]["theta_sd"][m] < ref_sd
    assert set(rep["comparison"]["ks_theta"]) >= {"bnpp|inpp", "bnpp|a0=0"}


def test_fig3_bottom_bnpp_closer_to_current_data():
    rep = run_scenario(SCENARIO_PRESETS["fig3_bottom"])
    mean = rep["comparison"]["theta_mean"]
    assert abs(mean["bnpp"]) < abs(mean["inpp"])
    for b, i in zip(rep["models"]["bnpp"]["a0"], rep["models"]["inpp"]["a0"]):
        assert b["mean"] < i["mean"]


@pytest.mark.parametrize("name", ["fig4_top", "fig4_bottom"])
def test_fig4_mixed_compatibility(name):
    rep = run_scenario(SCENARIO_PRESETS[name])
    inpp = [a["mean"] for a in rep["models"]["inpp"]["a0"]]
    assert inpp[0] > inpp[1]  # dataset 1 is compatible
    bn = [a["mean"] for a in rep["models"]["bnpp"]["a0"]]
    n0 = [h.n for h in SCENARIO_PRESETS[name].study.historical]
    # BNPP weights depend on the data only through n0k: the larger set gets the smaller weight
    assert (bn[0] < bn[1]) == (n0[0] > n0[1])


def test_scenario_writes_files_and_round_trips(tmp_path):
    cfg = ScenarioConfig(StudySet(NormalSummary(20, 0.1, 1.0), (NormalSummary(20, 0.3, 1.0),)),
                         ("npp", "bnpp", "bhm", "a0=1"), priors={"npp": "beta:2,2"},
                         outputs=str(tmp_path / "a"), grid_points=257)
    rep = run_scenario(cfg)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["a0_1_bnpp.csv", "a0_1_npp.csv", "report.json", "theta.csv"]
    d = json.loads(json.dumps(cfg.to_dict()))
    d["outputs"] = str(tmp_path / "b")
    rep2 = run_scenario(ScenarioConfig.from_dict(d))
    assert rep2["models"] == rep["models"]
    assert (tmp_path / "a" / "theta.csv").read_bytes() == (tmp_path / "b" / "theta.csv").read_bytes()
    # K = 1: NPP and the BHM under its induced prior coincide
    assert rep["comparison"]["ks_theta"]["npp|bhm"] < 1e-6


def test_yaml_config_with_sampler(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(
        "study:\n  current: {n: 30, ybar: 0.0, sigma2: 1.0}\n"
        "  historical:\n    - {n: 30, ybar: 0.2, sigma2: 1.0}\n    - {n: 60, ybar: 0.1, sigma2: 1.0}\n"
        "models: [bnpp, inpp]\n"
        "sampler: {chains: 2, iterations: 3000, burn_in: 1000, seed: 4}\n"
    )
    cfg = ScenarioConfig.from_dict(load_config(path))
    rep = run_scenario(cfg)
    assert rep["seed"] == 4
    for m in ("bnpp", "inpp"):
        assert rep["mcmc"][m]["ks_theta_vs_quadrature"] < 0.05


@pytest.mark.parametrize("d,match", [
    ({"study": {"current": {"n": 5, "ybar": 0, "sigma2": 1}, "historical": [{"n": 5, "ybar": 0, "sigma2": 1}]},
      "models": []}, "at least one model"),
    ({"preset": "nope"}, "unknown preset"),
    ({"models": ["bnpp"]}, "missing key 'study'"),
    ({"preset": "fig3_top", "models": ["npp"]}, "exactly one"),
    ({"preset": "fig3_top", "models": ["magic"]}, "unknown models"),
    ({"preset": "fig3_top", "priors": {"inpp": "ig:1,1"}}, "inpp prior"),
    ({"preset": "fig3_top", "priors": {"bhm": "beta:1,1"}}, "bhm prior"),
    ({"preset": "fig3_top", "priors": {"zzz": "beta:1,1"}}, "unknown model"),
])
def test_config_validation(d, match):
    with pytest.raises(ConfigError, match=match):
        ScenarioConfig.from_dict(d)


def test_fail_fast_writes_nothing(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"preset": "fig3_top", "models": [], "outputs": str(out)})
    assert not out.exists()


def test_load_config_errors(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("{unclosed: [")
    with pytest.raises(ConfigError):
        load_config(p)


@pytest.mark.parametrize("preset", ["fig_a1", "fig_a2"])
def test_equivalence_presets_quadrature(preset):
    rep = run_equivalence(preset, use_mcmc=False)
    assert rep["passed"] and rep["sup_norm"] < 1e-6
    assert "_grids" in rep and "_grids" not in public(rep)


def test_equivalence_random_k4():
    rep = run_equivalence("random", seed=17, K=4, use_mcmc=False)
    assert rep["passed"] and rep["route"] == "bnpp_vs_bhm"
    with pytest.raises(ConfigError):
        run_equivalence("fig_a9")


def test_random_study_ranges():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = random_study(rng, 3)
        for h in (s.current, *s.historical):
            assert 5 <= h.n <= 100 and -3 <= h.ybar <= 3 and 0.1 <= h.sigma2 <= 5


def test_equivalence_pair_k1_and_k2():
    s1 = StudySet(NormalSummary(10, 0.0, 1.0), (NormalSummary(15, 0.5, 2.0),))
    a, b, ip = equivalence_pair(s1, PriorSpec.beta(1.5, 3), points=257)
    assert np.max(np.abs(a.density - b.density)) < 1e-6 and not ip.data_dependent
    s2 = StudySet(s1.current, s1.historical * 2)
    a, b, ip = equivalence_pair(s2, PriorSpec.beta(1.5, 3), points=257)
    assert np.max(np.abs(a.density - b.density)) < 1e-6 and ip.data_dependent


def test_binary_study_and_lupus_demo(tmp_path):
    with pytest.raises(ConfigError):
        scenarios.binary_study(approx.SYNTHETIC_LUPUS[:1])
    rep = scenarios.lupus_demo(outputs=str(tmp_path), bernoulli=False, points=513)
    assert rep["equivalence"]["sup_norm_bnpp_vs_normal_bhm"] < 1e-6
    assert rep["data"]["label"].startswith("synthetic")
    assert (tmp_path / "report.json").exists()


@pytest.mark.parametrize("fig", [f for f in FIGURES if f not in ("a1", "a2", "a5")])
def test_emit_figure_data(tmp_path, fig):
    meta = emit_figure_data(fig, tmp_path, seed=3, points=257)
    assert meta["figure"] == fig
    csvs = sorted(p.name for p in tmp_path.glob("*.csv"))
    expected = {"fig1": 4, "fig2": 4, "fig3": 6, "fig4": 6, "fig5": 3}[fig]
    assert len(csvs) == expected
    for p in tmp_path.glob("*.csv"):
        data = np.loadtxt(p, delimiter=",", skiprows=1)
        assert np.all(np.isfinite(data))
    if fig == "fig1":
        assert meta["beta(1,1)"]["truncated_quantiles"] == [0.005, 0.995]
        assert meta["beta(10,2)"]["truncated_quantiles"] is None
        header = open(tmp_path / "fig1_beta_10_2.csv").readline().strip()
        assert header == "v,induced,fitted_ig"


@pytest.mark.slow
@pytest.mark.parametrize("fig", ["a1", "a2", "a5"])
def test_emit_sampler_figures(tmp_path, fig):
    meta = emit_figure_data(fig, tmp_path, seed=17)
    if fig == "a5":
        assert meta["ks_bernoulli_vs_normal_bhm"] < 0.05
    else:
        assert meta["passed"]


def test_emit_unknown_figure(tmp_path):
    with pytest.raises(ConfigError, match="unknown figure"):
        emit_figure_data("fig9", tmp_path)
