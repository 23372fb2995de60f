"""Scenario runner, equivalence checks, figure data and the binary-trial demo.

These functions back the command-line interface but are usable on their
own.  Each returns a JSON-ready report; when an output directory is given,
CSV grids and a ``report.json`` are written there.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import approx, fitting, mcmc, posterior, transform
from .core import (
    DensityGrid,
    NormalSummary,
    PriorSpec,
    StudySet,
    dumps,
    ks_distance,
    ks_sample_vs_grid,
    normalize,
    summarize,
)

log = logging.getLogger(__name__)

MODELS = ("npp", "inpp", "bnpp", "bhm", "a0=0", "a0=1")
QUAD_TOL = 1e-6
MCMC_TOL = 0.02


class ConfigError(ValueError):
    """Invalid scenario configuration (raised before any computation)."""


class ToleranceError(RuntimeError):
    """An equivalence or acceptance tolerance was not met."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _parse_prior(text: Any) -> PriorSpec | str:
    if isinstance(text, PriorSpec) or text == "induced":
        return text
    if isinstance(text, dict):
        return PriorSpec.from_dict(text)
    try:
        return PriorSpec.parse(str(text))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _prior_to_json(p) -> Any:
    return p if isinstance(p, str) else str_prior(p)


def str_prior(p: PriorSpec) -> str:
    """Inverse of :meth:`PriorSpec.parse` for parametric priors."""
    names = {"beta": "beta", "uniform": "uniform", "inverse_gamma": "ig", "half_normal": "halfnormal"}
    if p.kind not in names:
        raise ConfigError("tabulated priors cannot be written to a config file")
    args = ",".join(repr(float(x)) for x in p.params)
    return names[p.kind] + (f":{args}" if args else "")


@dataclass(frozen=True)
class ScenarioConfig:
    """A study, the models to fit, their priors and optional sampler settings.

    ``priors`` maps model name to a prior.  Defaults are uniform on ``a0`` for
    ``npp``/``inpp``/``bnpp``, and for ``bhm`` the string ``"induced"``: the
    v-prior induced by the ``bnpp`` (or ``npp``) prior.
    """

    study: StudySet
    models: tuple[str, ...]
    priors: dict[str, Any] = field(default_factory=dict)
    sampler: mcmc.SamplerConfig | None = None
    outputs: str | None = None
    grid_points: int = posterior.DEFAULT_THETA_POINTS

    def __post_init__(self) -> None:
        models = tuple(self.models)
        if not models:
            raise ConfigError("at least one model is required")
        bad = [m for m in models if m not in MODELS]
        if bad:
            raise ConfigError(f"unknown models {bad}; choose from {list(MODELS)}")
        if "npp" in models and self.study.K != 1:
            raise ConfigError("model 'npp' needs exactly one historical dataset; use 'inpp' or 'bnpp'")
        if self.grid_points < 3:
            raise ConfigError("grid_points must be at least 3")
        priors = {"npp": "uniform", "inpp": "uniform", "bnpp": "uniform", "bhm": "induced"}
        for k, v in dict(self.priors).items():
            if k not in priors:
                raise ConfigError(f"prior given for unknown model {k!r}")
            priors[k] = v
        parsed = {k: _parse_prior(v) for k, v in priors.items()}
        for k in ("npp", "inpp"):
            if parsed[k] == "induced" or not parsed[k].on_unit_interval:
                raise ConfigError(f"{k} prior must be on a0 in (0, 1)")
        if parsed["bnpp"] == "induced":
            raise ConfigError("bnpp prior must be an explicit prior on a0 or v")
        if parsed["bhm"] != "induced" and parsed["bhm"].on_unit_interval:
            raise ConfigError("bhm prior must be on v (or 'induced')")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "priors", parsed)
        if self.outputs is not None:
            out = Path(self.outputs)
            if out.exists() and not out.is_dir():
                raise ConfigError(f"output path {out} exists and is not a directory")

    def to_dict(self) -> dict:
        return {
            "study": self.study.to_dict(),
            "models": list(self.models),
            "priors": {k: _prior_to_json(v) for k, v in self.priors.items()},
            "sampler": None if self.sampler is None else self.sampler.to_dict(),
            "outputs": self.outputs,
            "grid_points": self.grid_points,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        try:
            if "preset" in d:
                if d["preset"] not in SCENARIO_PRESETS:
                    raise ConfigError(f"unknown preset {d['preset']!r}; choose from {sorted(SCENARIO_PRESETS)}")
                base = SCENARIO_PRESETS[d["preset"]]
                d = {**base.to_dict(), **{k: v for k, v in d.items() if k != "preset"}}
            study = StudySet.from_dict(d["study"])
            sampler = d.get("sampler")
            return cls(
                study=study,
                models=tuple(d.get("models", ())),
                priors=dict(d.get("priors") or {}),
                sampler=None if sampler is None else mcmc.SamplerConfig.from_dict(sampler),
                outputs=d.get("outputs"),
                grid_points=int(d.get("grid_points", posterior.DEFAULT_THETA_POINTS)),
            )
        except ConfigError:
            raise
        except KeyError as exc:
            raise ConfigError(f"invalid scenario config: missing key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario config: {exc}") from None


def load_config(path) -> dict:
    """Read a YAML or JSON file into a dict (JSON is valid YAML)."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at top level")
    return data


def _sim(ybar0, n0, ybar: float = 0.0, n: int = 30) -> StudySet:
    return StudySet(
        NormalSummary(n, ybar, 1.0),
        tuple(NormalSummary(int(m), float(y), 1.0) for y, m in zip(ybar0, n0)),
    )


_SIM_MODELS = ("bnpp", "inpp", "a0=0", "a0=1")

SCENARIO_PRESETS: dict[str, ScenarioConfig] = {
    # two historical datasets, sigma2 = 1, current ybar = 0, n = 30
    "fig3_top": ScenarioConfig(_sim((0.0, 0.0), (30, 60)), _SIM_MODELS),
    "fig3_bottom": ScenarioConfig(_sim((1.0, 1.0), (30, 60)), _SIM_MODELS),
    "fig4_top": ScenarioConfig(_sim((0.0, 1.0), (30, 60)), _SIM_MODELS),
    "fig4_bottom": ScenarioConfig(_sim((0.0, 1.0), (60, 30)), _SIM_MODELS),
}


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def write_columns(path, columns: dict[str, np.ndarray]) -> Path:
    """CSV with one column per entry, 17 significant digits."""
    path = Path(path)
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    lines = [",".join(names)]
    lines += [",".join(f"{x:.17g}" for x in row) for row in data]
    path.write_text("\n".join(lines) + "\n")
    return path


def _file_tag(model: str) -> str:
    return model.replace("a0=", "a0fixed")


def _histogram(samples: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Histogram density of ``samples`` evaluated at ``theta`` (bins centred on the grid)."""
    h = theta[1] - theta[0]
    edges = np.r_[theta - 0.5 * h, theta[-1] + 0.5 * h]
    counts, _ = np.histogram(samples, bins=edges)
    return counts / (samples.size * h)


# ---------------------------------------------------------------------------
# Scenario runner
# ---------------------------------------------------------------------------


def _bhm_prior(cfg: ScenarioConfig):
    p = cfg.priors["bhm"]
    if p != "induced":
        return p
    study = cfg.study
    if study.K == 1 and "npp" in cfg.models:
        return transform.induce_prior_v_single(cfg.priors["npp"], study.historical[0])
    src = cfg.priors["bnpp"]
    if not src.on_unit_interval:
        return src
    # the BNPP global weight is f_multi(v), also when K = 1
    return transform.induce_prior_v_multi(src, study)


def _theta_models(cfg: ScenarioConfig, theta: np.ndarray, chains: dict) -> dict[str, DensityGrid]:
    study = cfg.study
    out = {}
    for m in cfg.models:
        if m == "npp":
            out[m] = posterior.marginal_theta_npp_single(study, cfg.priors["npp"], theta=theta)
        elif m == "inpp":
            if study.K <= 2:
                out[m] = posterior.marginal_theta_inpp(study, cfg.priors["inpp"], theta=theta)
            else:
                cs = chains.setdefault("inpp", mcmc.mwg_inpp(study, cfg.priors["inpp"], cfg.sampler or mcmc.SamplerConfig()))
                out[m] = normalize(DensityGrid(theta, _histogram(cs.pooled("theta"), theta)))
        elif m == "bnpp":
            out[m] = posterior.marginal_theta_bnpp(study, cfg.priors["bnpp"], theta=theta)
        elif m == "bhm":
            out[m] = posterior.marginal_theta_bhm(study, _bhm_prior(cfg), theta=theta)
        else:
            out[m] = posterior.fixed_weight_posterior(study, float(m[-1]), theta=theta)
    return out


def _a0_models(cfg: ScenarioConfig, chains: dict) -> dict[str, list[DensityGrid]]:
    study, out = cfg.study, {}
    pts = cfg.grid_points
    if "npp" in cfg.models:
        out["npp"] = [posterior.marginal_a0_npp_single(study, cfg.priors["npp"], points=pts)]
    if "bnpp" in cfg.models:
        out["bnpp"] = posterior.marginal_a0k(study, "bnpp", cfg.priors["bnpp"], points=pts)
    if "inpp" in cfg.models:
        out["inpp"] = posterior.marginal_a0k(study, "inpp", cfg.priors["inpp"], points=pts,
                                             chains=chains.get("inpp"))
    return out


def _mode(grid: DensityGrid) -> float:
    return float(grid.points[int(np.argmax(grid.density))])


def run_scenario(cfg: ScenarioConfig) -> dict:
    """Fit every requested model and compare them.

    The report has per-model summaries of ``theta`` and of each ``a0k``,
    pairwise KS distances between ``theta`` posteriors, and (when a sampler
    is configured) sampler-versus-quadrature KS distances.
    """
    study = cfg.study
    theta = posterior.theta_grid(study, cfg.grid_points)
    chains: dict[str, mcmc.ChainSet] = {}
    thetas = _theta_models(cfg, theta, chains)
    a0s = _a0_models(cfg, chains)

    models: dict[str, Any] = {}
    for m, g in thetas.items():
        entry = {"theta": summarize(g).to_dict()}
        if m in a0s:
            entry["a0"] = [
                {**summarize(a).to_dict(), "mode": _mode(a)} for a in a0s[m]
            ]
        models[m] = entry
    names = list(thetas)
    ks = {
        f"{a}|{b}": ks_distance(thetas[a], thetas[b])
        for i, a in enumerate(names) for b in names[i + 1:]
    }
    report: dict[str, Any] = {
        "config": cfg.to_dict(),
        "seed": None if cfg.sampler is None else cfg.sampler.seed,
        "models": models,
        "comparison": {
            "theta_mean": {m: g.mean() for m, g in thetas.items()},
            "theta_sd": {m: g.sd() for m, g in thetas.items()},
            "ks_theta": ks,
        },
    }
    if cfg.sampler is not None:
        report["mcmc"] = _scenario_mcmc(cfg, thetas, chains)
    if cfg.outputs:
        _write_scenario(Path(cfg.outputs), theta, thetas, a0s, report)
    return report


def _scenario_mcmc(cfg: ScenarioConfig, thetas, chains) -> dict:
    study, sc = cfg.study, cfg.sampler
    out = {}
    for m in cfg.models:
        if m == "bnpp":
            cs = mcmc.mwg_bnpp(study, cfg.priors["bnpp"], sc)
        elif m in ("inpp", "npp"):
            cs = chains.get("inpp") or mcmc.mwg_inpp(study, cfg.priors[m], sc)
        elif m == "bhm":
            cs = mcmc.gibbs_bhm(study, _bhm_prior(cfg), sc)
        else:
            continue
        entry = {"diagnostics": {k: d.to_dict() for k, d in cs.diagnostics().items()},
                 "warnings": list(cs.warnings)}
        if not (m == "inpp" and study.K >= 3):
            entry["ks_theta_vs_quadrature"] = ks_sample_vs_grid(cs.pooled("theta"), thetas[m])
        out[m] = entry
    return out


def _write_scenario(out: Path, theta, thetas, a0s, report) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_columns(out / "theta.csv", {"theta": theta, **{_file_tag(m): g.density for m, g in thetas.items()}})
    for m, grids in a0s.items():
        for k, g in enumerate(grids, start=1):
            g.to_csv(out / f"a0_{k}_{_file_tag(m)}.csv", header=("a0", "density"))
    (out / "report.json").write_text(dumps(report))


# ---------------------------------------------------------------------------
# Equivalence checks
# ---------------------------------------------------------------------------

FIG_A1 = StudySet(NormalSummary(20, 2.0, 0.5), (NormalSummary(20, 1.5, 0.3),))
FIG_A2 = StudySet(
    NormalSummary(30, 1.5, 0.5),
    (NormalSummary(20, 1.0, 0.5), NormalSummary(30, 2.0, 1.0), NormalSummary(50, 3.0, 1.5)),
)


def random_study(rng: np.random.Generator, K: int) -> StudySet:
    """A random study set: ``n`` in [5, 100], means in [-3, 3], variances in [0.1, 5]."""
    def one():
        return NormalSummary(int(rng.integers(5, 101)), float(rng.uniform(-3.0, 3.0)),
                             float(rng.uniform(0.1, 5.0)))
    return StudySet(one(), tuple(one() for _ in range(K)))


def random_beta(rng: np.random.Generator) -> PriorSpec:
    return PriorSpec.beta(float(rng.uniform(0.5, 5.0)), float(rng.uniform(0.5, 5.0)))


def equivalence_pair(study: StudySet, prior_a0: PriorSpec, theta=None, points: int = 1025):
    """Quadrature ``theta`` posteriors under the power-prior route and the BHM route.

    ``K = 1`` compares the NPP with the BHM under the single-dataset induced
    prior; ``K >= 2`` compares the BNPP with the BHM under the multi-dataset
    induced prior.
    """
    th = posterior.theta_grid(study, points) if theta is None else theta
    if study.K == 1:
        ip = transform.induce_prior_v_single(prior_a0, study.historical[0])
        a = posterior.marginal_theta_npp_single(study, prior_a0, theta=th)
        b = posterior.marginal_theta_bhm_single(study, ip, theta=th)
    else:
        ip = transform.induce_prior_v_multi(prior_a0, study)
        a = posterior.marginal_theta_bnpp(study, prior_a0, theta=th)
        b = posterior.marginal_theta_bhm_multi(study, ip, theta=th)
    return a, b, ip


def run_equivalence(
    preset: str,
    seed: int = 17,
    K: int | None = None,
    use_mcmc: bool = True,
    sampler: mcmc.SamplerConfig | None = None,
    points: int = 1025,
) -> dict:
    """Check that power-prior and BHM posteriors for ``theta`` coincide.

    ``preset`` is ``fig_a1``, ``fig_a2`` or ``random`` (study and beta prior
    drawn from ``seed``; ``K`` defaults to 4).  The sampler check compares
    both the power-prior sampler and the BHM Gibbs sampler with quadrature.
    """
    if preset == "fig_a1":
        study, prior, sc = FIG_A1, PriorSpec.beta(2, 2), mcmc.SamplerConfig.preset("fig_a1", seed=seed)
    elif preset == "fig_a2":
        study, prior, sc = FIG_A2, PriorSpec.beta(2, 2), mcmc.SamplerConfig.preset("fig_a2", seed=seed)
    elif preset == "random":
        rng = np.random.default_rng(seed)
        study = random_study(rng, 4 if K is None else K)
        prior, sc = random_beta(rng), mcmc.SamplerConfig.preset("fig_a2", seed=seed)
    else:
        raise ConfigError(f"unknown equivalence preset {preset!r}")
    sc = sampler or sc
    a, b, ip = equivalence_pair(study, prior, points=points)
    sup = float(np.max(np.abs(a.density - b.density)))
    report: dict[str, Any] = {
        "preset": preset, "seed": seed, "study": study.to_dict(), "prior_a0": str_prior(prior),
        "route": "npp_vs_bhm" if study.K == 1 else "bnpp_vs_bhm",
        "sup_norm": sup, "ks_quadrature": ks_distance(a, b),
        "tolerances": {"quadrature": QUAD_TOL, "mcmc": MCMC_TOL},
        "theta": {"power_prior": summarize(a).to_dict(), "bhm": summarize(b).to_dict()},
    }
    passed = sup < QUAD_TOL
    if use_mcmc:
        if study.K == 1:
            pp = mcmc.mwg_inpp(study, prior, sc)
        else:
            pp = mcmc.mwg_bnpp(study, prior, sc)
        bh = mcmc.gibbs_bhm(study, ip, sc)
        ks_pp = ks_sample_vs_grid(pp.pooled("theta"), a)
        ks_bh = ks_sample_vs_grid(bh.pooled("theta"), b)
        report["mcmc"] = {
            "sampler": sc.to_dict(),
            "ks_power_prior_sampler": ks_pp,
            "ks_bhm_gibbs": ks_bh,
            "ess_theta": {"power_prior": pp.ess["theta"], "bhm": bh.ess["theta"]},
        }
        report["_draws"] = {"power_prior": pp.pooled("theta"), "bhm": bh.pooled("theta")}
        passed = passed and ks_pp < MCMC_TOL and ks_bh < MCMC_TOL
    report["passed"] = bool(passed)
    report["_grids"] = {"power_prior": a, "bhm": b}
    return report


def public(report: dict) -> dict:
    """Drop in-memory artefacts (keys starting with ``_``) from a report."""
    return {k: v for k, v in report.items() if not k.startswith("_")}


# ---------------------------------------------------------------------------
# Binary-trial pipeline
# ---------------------------------------------------------------------------


def binary_study(trials: Sequence[approx.TwoArmBinomialSummary], continuity: float = 0.0) -> StudySet:
    """Current trial first, then historical trials, as normal summaries."""
    sums = [approx.trial_summary(t, continuity) for t in trials]
    if len(sums) < 2:
        raise ConfigError("need a current trial and at least one historical trial")
    return StudySet(sums[0], tuple(sums[1:]))


def lupus_demo(
    trials: Sequence[approx.TwoArmBinomialSummary] = approx.SYNTHETIC_LUPUS,
    sampler: mcmc.SamplerConfig | None = None,
    outputs: str | None = None,
    bernoulli: bool = True,
    points: int = 1025,
) -> dict:
    """BNPP and iNPP analysis of a binary current trial with historical trials.

    Uses uniform priors throughout (on the global weight for the BNPP, on each
    weight for the iNPP).  Also checks BNPP against the normal BHM with the
    induced prior and, optionally, against the Bernoulli BHM sampler.
    """
    sampler = sampler or mcmc.SamplerConfig.preset("fig_a1")
    study = binary_study(trials)
    cfg = ScenarioConfig(study, ("bnpp", "inpp", "bhm", "a0=0", "a0=1"),
                         outputs=outputs, grid_points=points)
    rep = run_scenario(cfg)
    theta = posterior.theta_grid(study, points)
    bnpp = posterior.marginal_theta_bnpp(study, PriorSpec.uniform01(), theta=theta)
    ip = transform.induce_prior_v_multi(PriorSpec.uniform01(), study)
    bhm = posterior.marginal_theta_bhm_multi(study, ip, theta=theta)
    check: dict[str, Any] = {"sup_norm_bnpp_vs_normal_bhm": float(np.max(np.abs(bnpp.density - bhm.density)))}
    if bernoulli:
        cs = mcmc.mh_bernoulli_bhm(trials, ip, sampler)
        check["ks_bernoulli_bhm_vs_bnpp"] = ks_sample_vs_grid(cs.pooled("theta"), bnpp)
        check["bernoulli_ess_theta"] = cs.ess["theta"]
    rep["data"] = {
        "label": "synthetic responder counts with published trial sizes"
        if tuple(trials) == approx.SYNTHETIC_LUPUS else "user-supplied counts",
        "trials": [t.to_dict() for t in trials],
        "log_or": [approx.log_or(t).to_dict() for t in trials],
    }
    rep["equivalence"] = check
    if outputs:
        (Path(outputs) / "report.json").write_text(dumps(rep))
    return rep


# ---------------------------------------------------------------------------
# Figure data
# ---------------------------------------------------------------------------

FIGURES = ("fig1", "fig2", "fig3", "fig4", "fig5", "a1", "a2", "a5")
FIG1_PRIORS = ((1.0, 1.0), (0.5, 0.5), (2.0, 10.0), (10.0, 2.0))
FIG2_PRIORS = ((3.0, 10.0), (3.0, 1.0), (1.0, 0.1), (1.0, 0.01))
FIT_TRUNCATION = (0.005, 0.995)
_UNIT_HIST = NormalSummary(1, 0.0, 1.0)  # n0 / sigma0^2 = 1


def _tag(*xs: float) -> str:
    return "_".join(f"{x:g}".replace(".", "p") for x in xs)


def figure_fig1(out: Path, hist: NormalSummary = _UNIT_HIST) -> dict:
    """Induced v-priors from four beta priors and their IG approximations."""
    meta = {}
    for a, b in FIG1_PRIORS:
        ip = transform.induce_prior_v_single(PriorSpec.beta(a, b), hist)
        try:
            fit, trunc = fitting.fit_ig_kl(ip), None
        except fitting.FitError:
            # E[1/v] diverges; fit the central quantile range instead
            fit, trunc = fitting.fit_ig_kl(ip, truncate=FIT_TRUNCATION), list(FIT_TRUNCATION)
        v = ip.density.points
        write_columns(out / f"fig1_beta_{_tag(a, b)}.csv",
                      {"v": v, "induced": ip.density.density, "fitted_ig": fit.pdf(v)})
        meta[f"beta({a:g},{b:g})"] = {**fit.to_dict(), "truncated_quantiles": trunc}
    return meta


def figure_fig2(out: Path, seed: int, hist: NormalSummary = _UNIT_HIST, samples: int = 100_000) -> dict:
    """Induced a0-priors from four IG priors and their beta approximations."""
    rng = np.random.default_rng(seed)
    meta = {}
    for c, d in FIG2_PRIORS:
        prior_v = PriorSpec.inverse_gamma(c, d)
        ip = transform.induce_prior_a0_single(prior_v, hist)
        a0 = transform.f_single(prior_v.sample(rng, samples), hist)
        a0 = a0[(a0 > 0) & (a0 < 1)]
        fit = fitting.fit_beta_mle(a0)
        x = ip.density.points
        write_columns(out / f"fig2_ig_{_tag(c, d)}.csv",
                      {"a0": x, "induced": ip.density.density, "fitted_beta": fit.pdf(x)})
        meta[f"ig({c:g},{d:g})"] = {**fit.to_dict(), "mean": fit.mean, "samples": int(a0.size)}
    return meta


def _three_panel(out: Path, name: str, study: StudySet, points: int = 1025) -> dict:
    """Data densities, a0k posteriors (BNPP, iNPP) and four theta posteriors."""
    theta = posterior.theta_grid(study, points)
    se = [math.sqrt(s.sigma2 / s.n) for s in (study.current, *study.historical)]
    means = [study.current.ybar, *study.ybar0]
    cols = {"x": theta}
    for i, (m, s) in enumerate(zip(means, se)):
        cols["current" if i == 0 else f"historical_{i}"] = np.exp(-0.5 * ((theta - m) / s) ** 2) / (s * math.sqrt(2 * math.pi))
    write_columns(out / f"{name}_data.csv", cols)
    cfg = ScenarioConfig(study, _SIM_MODELS, grid_points=points)
    chains: dict = {}
    a0s = _a0_models(cfg, chains)
    x = a0s["bnpp"][0].points
    write_columns(out / f"{name}_a0.csv", {
        "a0": x,
        **{f"bnpp_a0{k + 1}": g.density for k, g in enumerate(a0s["bnpp"])},
        **{f"inpp_a0{k + 1}": g.density for k, g in enumerate(a0s["inpp"])},
    })
    th = _theta_models(cfg, theta, chains)
    write_columns(out / f"{name}_theta.csv", {"theta": theta, **{_file_tag(m): g.density for m, g in th.items()}})
    return {
        "theta": {m: summarize(g).to_dict() for m, g in th.items()},
        "a0": {m: [summarize(g).to_dict() for g in gs] for m, gs in a0s.items()},
    }


def figure_equivalence(out: Path, preset: str, seed: int, points: int = 1025) -> dict:
    rep = run_equivalence(preset, seed=seed, points=points)
    a, b = rep["_grids"]["power_prior"], rep["_grids"]["bhm"]
    th = a.points
    write_columns(out / f"{preset[-2:]}_theta.csv", {
        "theta": th, "power_prior_quadrature": a.density, "bhm_quadrature": b.density,
        "power_prior_histogram": _histogram(rep["_draws"]["power_prior"], th),
        "bhm_gibbs_histogram": _histogram(rep["_draws"]["bhm"], th),
    })
    return public(rep)


def figure_a5(out: Path, seed: int, points: int = 1025) -> dict:
    trials = approx.SYNTHETIC_LUPUS
    study = binary_study(trials)
    sc = mcmc.SamplerConfig.preset("fig_a1", seed=seed)
    theta = posterior.theta_grid(study, points)
    u = PriorSpec.uniform01()
    ip = transform.induce_prior_v_multi(u, study)
    bhm = posterior.marginal_theta_bhm_multi(study, ip, theta=theta)
    bn = mcmc.mwg_bnpp(study, u, sc)
    be = mcmc.mh_bernoulli_bhm(trials, ip, sc)
    write_columns(out / "a5_theta.csv", {
        "theta": theta, "bnpp_histogram": _histogram(bn.pooled("theta"), theta),
        "normal_bhm": bhm.density, "bernoulli_bhm_histogram": _histogram(be.pooled("theta"), theta),
    })
    return {
        "ks_bnpp_sampler_vs_normal_bhm": ks_sample_vs_grid(bn.pooled("theta"), bhm),
        "ks_bernoulli_vs_normal_bhm": ks_sample_vs_grid(be.pooled("theta"), bhm),
        "counts": "synthetic",
    }


def emit_figure_data(figure: str, out_dir, seed: int = 20_240_101, points: int = 1025) -> dict:
    """Write the curves behind one figure as CSV files; returns metadata."""
    if figure not in FIGURES:
        raise ConfigError(f"unknown figure {figure!r}; choose from {list(FIGURES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if figure == "fig1":
        meta = figure_fig1(out)
    elif figure == "fig2":
        meta = figure_fig2(out, seed)
    elif figure in ("fig3", "fig4"):
        meta = {row: _three_panel(out, f"{figure}_{row}", SCENARIO_PRESETS[f"{figure}_{row}"].study, points)
                for row in ("top", "bottom")}
    elif figure == "fig5":
        meta = _three_panel(out, "fig5", binary_study(approx.SYNTHETIC_LUPUS), points)
        meta["counts"] = "synthetic"
    elif figure in ("a1", "a2"):
        meta = figure_equivalence(out, f"fig_{figure}", seed, points)
    else:
        meta = figure_a5(out, seed, points)
    meta = {"figure": figure, "seed": seed, **meta}
    (out / f"{figure}_meta.json").write_text(dumps(meta))
    return meta
