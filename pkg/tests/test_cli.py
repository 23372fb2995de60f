import json

import numpy as np
import pytest

from nppbridge import cli, scenarios
from nppbridge.core import PriorSpec


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_transform_and_induce(capsys, tmp_path):
    code, out, _ = run(capsys, "transform", "--hist", "20,1.5,0.3", "--single", "--v", "0.1", "1")
    assert code == 0
    rep = json.loads(out)
    assert rep["map"] == "single"
    code, out, _ = run(capsys, "transform", "--hist", "20,1.5,0.3", "--hist", "30,0,1", "--v", "0.05",
                       "--induce", "beta:2,2", "--out-dir", str(tmp_path))
    assert code == 0 and (tmp_path / "induced_v.csv").exists()


def test_global_flags_before_or_after_subcommand(capsys, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert run(capsys, "--out-dir", str(a), "binary", "--trial", "50,30,50,20", "--trial", "60,30,60,25")[0] == 0
    assert run(capsys, "binary", "--trial", "50,30,50,20", "--trial", "60,30,60,25", "--out-dir", str(b))[0] == 0
    assert (a / "study.json").read_text() == (b / "study.json").read_text()


def test_posterior_outputs(capsys, tmp_path):
    code, out, _ = run(capsys, "posterior", "--model", "bnpp", "--prior", "beta:2,2", "--current", "30,1.5,0.5",
                       "--hist", "20,1,0.5", "--hist", "30,2,1", "--out-dir", str(tmp_path), "--grid-points", "257")
    assert code == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert {"theta_bnpp.csv", "a0_1_bnpp.csv", "a0_2_bnpp.csv", "summary_bnpp.json"} <= names
    assert json.loads(out)["provenance"]["grid_points"] == 257


def test_sample_outputs(capsys, tmp_path):
    code, _, _ = run(capsys, "sample", "--model", "bnpp", "--prior", "uniform", "--current", "30,0,1",
                     "--hist", "30,0.2,1", "--chains", "2", "--iters", "1000", "--burnin", "200",
                     "--seed", "3", "--out-dir", str(tmp_path))
    assert code == 0
    first = (tmp_path / "draws_bnpp.csv").read_bytes()
    run(capsys, "sample", "--model", "bnpp", "--prior", "uniform", "--current", "30,0,1",
        "--hist", "30,0.2,1", "--chains", "2", "--iters", "1000", "--burnin", "200",
        "--seed", "3", "--out-dir", str(tmp_path))
    assert (tmp_path / "draws_bnpp.csv").read_bytes() == first
    assert "ess" in (tmp_path / "diagnostics_bnpp.json").read_text()


def test_fit_beta_and_ig(capsys, tmp_path):
    x = np.random.default_rng(0).beta(2, 5, 5000)
    np.savetxt(tmp_path / "s.csv", x)
    code, out, _ = run(capsys, "fit", "--input", str(tmp_path / "s.csv"), "--family", "beta",
                       "--out-dir", str(tmp_path))
    assert code == 0 and abs(json.loads(out)["alpha"] - 2) < 0.15
    v = np.geomspace(1e-3, 1e8, 4001)
    grid = PriorSpec.inverse_gamma(3, 1).pdf(v)
    np.savetxt(tmp_path / "g.csv", np.column_stack([v, grid]), delimiter=",", header="v,density", comments="")
    code, out, _ = run(capsys, "fit", "--input", str(tmp_path / "g.csv"), "--family", "inverse-gamma",
                       "--out-dir", str(tmp_path))
    assert code == 0 and abs(json.loads(out)["c"] - 3) < 1e-3


def test_scenario_preset_and_equivalence(capsys, tmp_path):
    code, out, _ = run(capsys, "scenario", "--preset", "fig3_top", "--grid-points", "257",
                       "--out-dir", str(tmp_path))
    assert code == 0 and (tmp_path / "report.json").exists()
    code, out, _ = run(capsys, "equivalence", "--preset", "fig_a1", "--no-mcmc", "--out-dir", str(tmp_path))
    assert code == 0 and json.loads(out)["passed"]


def test_figure_data_command(capsys, tmp_path):
    code, _, _ = run(capsys, "figure-data", "--figure", "fig1", "--out-dir", str(tmp_path))
    assert code == 0 and (tmp_path / "fig1_meta.json").exists()


def test_lupus_demo_command(capsys, tmp_path):
    code, out, _ = run(capsys, "lupus-demo", "--no-bernoulli", "--grid-points", "257", "--out-dir", str(tmp_path))
    assert code == 0
    assert json.loads(out)["equivalence"]["sup_norm_bnpp_vs_normal_bhm"] < 1e-6


@pytest.mark.parametrize("argv", [
    ["transform"],
    ["transform", "--hist", "20,1.5,0.3", "--single", "--a0", "1.5"],
    ["posterior", "--model", "npp", "--current", "30,0,1"],
    ["scenario"],
    ["scenario", "--config", "/nonexistent/cfg.yaml"],
    ["binary", "--trial", "20,0,20,5", "--trial", "20,4,20,5"],
])
def test_config_errors_exit_2(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert err.startswith("nppbridge:")


@pytest.mark.parametrize("argv", [
    ["posterior", "--model", "nope"],
    ["transform", "--hist", "20,1.5", "--v", "1"],
    ["binary", "--trial", "20,x,20,5"],
])
def test_argparse_errors_exit_2(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


def test_numerical_failure_exit_3(capsys, tmp_path):
    # flat density near v = 0: E[1/v] diverges and no IG fit exists
    v = np.geomspace(1e-4, 1e6, 2001)
    np.savetxt(tmp_path / "g.csv", np.column_stack([v, 1 / (1 + v) ** 2]), delimiter=",")
    code, _, err = run(capsys, "fit", "--input", str(tmp_path / "g.csv"), "--family", "inverse-gamma",
                       "--out-dir", str(tmp_path))
    assert code == 3 and "numerical" in err


def test_tolerance_failure_exit_4(capsys, tmp_path, monkeypatch):
    monkeypatch.setattr(scenarios, "QUAD_TOL", 0.0)
    code, out, _ = run(capsys, "equivalence", "--preset", "fig_a1", "--no-mcmc", "--out-dir", str(tmp_path))
    assert code == 4
    assert json.loads(out)["passed"] is False
