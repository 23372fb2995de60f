"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 tolerance failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, approx, fitting, mcmc, posterior, scenarios, transform
from .core import DensityGrid, GridError, NormalSummary, PriorSpec, StudySet, dumps, normalize, summarize
from .quadrature import QuadratureError

log = logging.getLogger("nppbridge")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_TOLERANCE = 0, 2, 3, 4
GLOBAL_DEFAULTS = {"seed": 20_240_101, "out_dir": Path("."),
                   "grid_points": posterior.DEFAULT_THETA_POINTS, "verbose": False}


class _ToleranceFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------


def _summary(text: str) -> NormalSummary:
    try:
        n, ybar, s2 = (t.strip() for t in text.split(","))
        return NormalSummary(int(n), float(ybar), float(s2))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected n,ybar,sigma2 but got {text!r} ({exc})") from None


def _trial(text: str) -> approx.TwoArmBinomialSummary:
    try:
        n_t, y_t, n_c, y_c = (int(t) for t in text.split(","))
        return approx.TwoArmBinomialSummary(n_t, y_t, n_c, y_c)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected n_t,y_t,n_c,y_c but got {text!r} ({exc})") from None


def _prior(text: str) -> PriorSpec:
    try:
        return PriorSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_study_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--current", type=_summary, metavar="N,YBAR,SIGMA2",
                   help="current-data summary")
    p.add_argument("--hist", type=_summary, action="append", metavar="N,YBAR,SIGMA2",
                   help="historical-data summary (repeat for each dataset)")
    p.add_argument("--study", type=Path, help="YAML/JSON file with 'current' and 'historical'")


def _study(args) -> StudySet:
    if args.study is not None:
        if args.current is not None or args.hist:
            raise scenarios.ConfigError("give either --study or --current/--hist, not both")
        return StudySet.from_dict(scenarios.load_config(args.study))
    if args.current is None or not args.hist:
        raise scenarios.ConfigError("need --current and at least one --hist (or --study)")
    return StudySet(args.current, tuple(args.hist))


def _sampler(args) -> mcmc.SamplerConfig:
    return mcmc.SamplerConfig(chains=args.chains, iterations=args.iters, burn_in=args.burnin,
                              seed=args.seed)


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj) -> None:
    sys.stdout.write(dumps(obj) + "\n")


def _provenance(args) -> dict:
    skip = {"func", "study"}
    d = {k: (str(v) if isinstance(v, (Path, PriorSpec)) else v) for k, v in vars(args).items() if k not in skip}
    for key in ("current",):
        if isinstance(d.get(key), NormalSummary):
            d[key] = d[key].to_dict()
    if d.get("hist"):
        d["hist"] = [h.to_dict() for h in d["hist"]]
    if d.get("trial"):
        d["trial"] = [t.to_dict() for t in d["trial"]]
    if args.__dict__.get("study") is not None:
        d["study"] = str(args.study)
    return d


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_transform(args) -> int:
    hist = tuple(args.hist or ())
    if not hist:
        raise scenarios.ConfigError("transform needs at least one --hist")
    single = args.single
    if single and len(hist) != 1:
        raise scenarios.ConfigError("--single needs exactly one --hist")
    out: dict = {"hist": [h.to_dict() for h in hist], "map": "single" if single else "multi"}
    if args.v:
        v = np.array(args.v, dtype=float)
        if single:
            out["v"] = {"v": v, "a0": transform.f_single(v, hist[0]),
                        "abs_df": np.exp(transform.log_abs_df_single(v, hist[0]))}
        else:
            b = transform.bridge_arrays(v, np.array([h.precision for h in hist]),
                                        np.array([h.precision * h.ybar for h in hist]))
            out["v"] = {"v": v, "a0": b["a0"], "a0k": transform.h_k(v, hist).tolist(),
                        "abs_df": b["jacobian"]}
    if args.a0:
        a0 = np.array(args.a0, dtype=float)
        inv = transform.f_single_inv(a0, hist[0]) if single else np.array(
            [transform.f_multi_inv(float(x), hist) for x in a0])
        out["a0"] = {"a0": a0, "v": inv}
    if args.induce is not None:
        prior = args.induce
        if prior.on_unit_interval:
            kw = {"points": args.grid_points, "vmax": args.vmax}
            ip = (transform.induce_prior_v_single(prior, hist[0], **kw)
                  if single else transform.induce_prior_v_multi(prior, hist, **kw))
            name = "induced_v.csv"
        else:
            if len(hist) != 1:
                raise scenarios.ConfigError("a prior on v induces a prior on a0 only for one dataset")
            ip = transform.induce_prior_a0_single(prior, hist[0], points=args.grid_points)
            name = "induced_a0.csv"
        path = _out(args) / name
        ip.density.to_csv(path, header=("v" if ip.side == "on_v" else "a0", "density"))
        out["induced"] = {"file": str(path), "side": ip.side, "source": str(prior),
                          "proper": ip.proper, "tail_mass": ip.tail_mass}
    out["provenance"] = _provenance(args)
    _emit(out)
    return EXIT_OK


def _posterior_grids(args, study: StudySet):
    model, prior = args.model, args.prior
    pts = args.grid_points
    theta = posterior.theta_grid(study, pts)
    a0 = []
    if model == "npp":
        prior = prior or PriorSpec.uniform01()
        if study.K == 1:
            th = posterior.marginal_theta_npp_single(study, prior, theta=theta)
            a0 = [posterior.marginal_a0_npp_single(study, prior, points=pts)]
        else:
            raise scenarios.ConfigError("model npp needs exactly one --hist; use inpp or bnpp")
    elif model == "inpp":
        prior = prior or PriorSpec.uniform01()
        th = posterior.marginal_theta_inpp(study, prior, theta=theta)
        a0 = posterior.marginal_a0k(study, "inpp", prior, points=pts)
    elif model == "bnpp":
        prior = prior or PriorSpec.uniform01()
        th = posterior.marginal_theta_bnpp(study, prior, theta=theta)
        a0 = posterior.marginal_a0k(study, "bnpp", prior, points=pts)
    else:
        if prior is None:
            prior = transform.induce_prior_v_multi(PriorSpec.uniform01(), study)
        elif prior.on_unit_interval:
            prior = (transform.induce_prior_v_single(prior, study.historical[0]) if study.K == 1
                     else transform.induce_prior_v_multi(prior, study))
        th = posterior.marginal_theta_bhm(study, prior, theta=theta)
    return th, a0, prior


def cmd_posterior(args) -> int:
    study = _study(args)
    th, a0, prior = _posterior_grids(args, study)
    out = _out(args)
    th.to_csv(out / f"theta_{args.model}.csv", header=("theta", "density"))
    for k, g in enumerate(a0, start=1):
        g.to_csv(out / f"a0_{k}_{args.model}.csv", header=("a0", "density"))
    rep = {
        "model": args.model,
        "prior": str(prior) if isinstance(prior, PriorSpec) else f"induced from {prior.source}",
        "study": study.to_dict(),
        "theta": summarize(th).to_dict(),
        "a0": [summarize(g).to_dict() for g in a0],
        "provenance": _provenance(args),
    }
    (out / f"summary_{args.model}.json").write_text(dumps(rep))
    _emit(rep)
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _sampler(args)
    if args.model == "bernoulli":
        trials = args.trial or list(approx.SYNTHETIC_LUPUS)
        study = scenarios.binary_study(trials)
        prior = args.prior or transform.induce_prior_v_multi(PriorSpec.uniform01(), study)
        if prior.on_unit_interval:
            prior = transform.induce_prior_v_multi(prior, study)
        cs = mcmc.mh_bernoulli_bhm(trials, prior, cfg)
    else:
        study = _study(args)
        prior = args.prior
        if args.model == "bhm":
            if prior is None or prior.on_unit_interval:
                src = prior or PriorSpec.uniform01()
                prior = transform.induce_prior_v_multi(src, study)
            cs = mcmc.gibbs_bhm(study, prior, cfg)
        elif args.model == "bnpp":
            cs = mcmc.mwg_bnpp(study, prior or PriorSpec.uniform01(), cfg)
        else:
            cs = mcmc.mwg_inpp(study, prior or PriorSpec.uniform01(), cfg)
    out = _out(args)
    cs.write_long_csv(out / f"draws_{args.model}.csv")
    rep = {
        "model": args.model,
        "seed": cfg.seed,
        "sampler": cfg.to_dict(),
        "backend": cs.backend,
        "diagnostics": {k: d.to_dict() for k, d in cs.diagnostics().items()},
        "acceptance": {k: np.asarray(v).tolist() for k, v in cs.acceptance.items()},
        "warnings": list(cs.warnings),
        "provenance": _provenance(args),
    }
    (out / f"diagnostics_{args.model}.json").write_text(dumps(rep))
    _emit(rep)
    return EXIT_OK


def cmd_fit(args) -> int:
    out = _out(args)
    if args.family == "inverse-gamma":
        grid = normalize(DensityGrid.from_csv(str(args.input)))
        trunc = tuple(args.truncate) if args.truncate else None
        fit = fitting.fit_ig_kl(grid, truncate=trunc)
        overlay = {"v": grid.points, "target": grid.density, "fitted": fit.pdf(grid.points)}
    else:
        x = np.loadtxt(args.input, delimiter=",", ndmin=1, comments="#",
                       skiprows=1 if args.header else 0)
        fit = fitting.fit_beta_mle(x)
        hist, edges = np.histogram(x, bins=100, range=(0.0, 1.0), density=True)
        mid = 0.5 * (edges[1:] + edges[:-1])
        overlay = {"a0": mid, "target": hist, "fitted": fit.pdf(mid)}
    scenarios.write_columns(out / "fit_overlay.csv", overlay)
    rep = {**fit.to_dict(), "provenance": _provenance(args)}
    (out / "fit.json").write_text(dumps(rep))
    _emit(rep)
    return EXIT_OK


def cmd_binary(args) -> int:
    trials = args.trial
    approxs = [approx.log_or(t, args.continuity) for t in trials]
    rep: dict = {"trials": [t.to_dict() for t in trials], "log_or": [a.to_dict() for a in approxs]}
    if len(trials) >= 2:
        study = scenarios.binary_study(trials, args.continuity)
        rep["study"] = study.to_dict()
        path = _out(args) / "study.json"
        path.write_text(json.dumps(study.to_dict(), indent=2))
        rep["study_file"] = str(path)
    _emit(rep)
    return EXIT_OK


def cmd_scenario(args) -> int:
    if args.config is not None:
        data = scenarios.load_config(args.config)
    elif args.preset is not None:
        data = {"preset": args.preset}
    else:
        raise scenarios.ConfigError("need --config or --preset")
    data = dict(data)
    data.setdefault("outputs", str(args.out_dir))
    data.setdefault("grid_points", args.grid_points)
    if args.with_mcmc and data.get("sampler") is None:
        data["sampler"] = mcmc.SamplerConfig(seed=args.seed).to_dict()
    cfg = scenarios.ScenarioConfig.from_dict(data)
    rep = scenarios.run_scenario(cfg)
    _emit({"models": rep["models"], "comparison": rep["comparison"], "outputs": cfg.outputs})
    return EXIT_OK


def cmd_equivalence(args) -> int:
    rep = scenarios.run_equivalence(args.preset, seed=args.seed, K=args.K,
                                    use_mcmc=not args.no_mcmc, points=args.grid_points)
    pub = scenarios.public(rep)
    out = _out(args)
    (out / f"equivalence_{args.preset}.json").write_text(dumps(pub))
    _emit(pub)
    if not rep["passed"]:
        raise _ToleranceFailure(f"equivalence preset {args.preset} failed its tolerances")
    return EXIT_OK


def cmd_figure_data(args) -> int:
    meta = scenarios.emit_figure_data(args.figure, args.out_dir, seed=args.seed, points=args.grid_points)
    _emit(meta)
    return EXIT_OK


def cmd_lupus_demo(args) -> int:
    trials = args.trial or list(approx.SYNTHETIC_LUPUS)
    sc = mcmc.SamplerConfig.preset("fig_a1", seed=args.seed)
    rep = scenarios.lupus_demo(trials, sampler=sc, outputs=str(args.out_dir),
                               bernoulli=not args.no_bernoulli, points=args.grid_points)
    _emit({"data": rep["data"], "models": rep["models"], "equivalence": rep["equivalence"]})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS lets the shared flags appear before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help=f"top-level random seed (default {GLOBAL_DEFAULTS['seed']})")
    common.add_argument("--out-dir", type=Path, help="directory for output files (default .)")
    common.add_argument("--grid-points", type=int,
                        help=f"points in each output density grid (default {GLOBAL_DEFAULTS['grid_points']})")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="nppbridge",
        description="Normalized power priors, hierarchical models and the prior bridge between them.",
        parents=[common],
        allow_abbrev=False,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", parents=[common], allow_abbrev=False, help="map v <-> a0 and induce priors")
    p.add_argument("--hist", type=_summary, action="append", metavar="N,YBAR,SIGMA2")
    p.add_argument("--single", action="store_true",
                   help="single-dataset map a0 = 1/(2 v n0/sigma0^2 + 1) instead of the global weight")
    p.add_argument("--v", type=float, nargs="+", help="evaluate a0 (and a0k) at these v")
    p.add_argument("--a0", type=float, nargs="+", help="invert: v for these a0")
    p.add_argument("--induce", type=_prior, metavar="PRIOR",
                   help="induce a prior on the other side, e.g. beta:2,2 or ig:3,10")
    p.add_argument("--vmax", type=float, help="upper end of the v-grid (default: chosen from the tail mass)")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("posterior", parents=[common], allow_abbrev=False, help="quadrature marginal posteriors")
    p.add_argument("--model", choices=["npp", "inpp", "bnpp", "bhm"], required=True)
    p.add_argument("--prior", type=_prior, help="prior on a0 (npp/inpp/bnpp) or on v (bhm)")
    _add_study_args(p)
    p.set_defaults(func=cmd_posterior)

    p = sub.add_parser("sample", parents=[common], allow_abbrev=False, help="MCMC draws and diagnostics")
    p.add_argument("--model", choices=["bhm", "bnpp", "inpp", "bernoulli"], required=True)
    p.add_argument("--prior", type=_prior)
    p.add_argument("--trial", type=_trial, action="append", metavar="NT,YT,NC,YC",
                   help="binary trial counts for --model bernoulli (current first)")
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--burnin", type=int, default=5_000)
    _add_study_args(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fit", parents=[common], allow_abbrev=False, help="inverse-gamma or beta approximation")
    p.add_argument("--input", type=Path, required=True,
                   help="density grid CSV (inverse-gamma) or one-column sample CSV (beta)")
    p.add_argument("--family", choices=["inverse-gamma", "beta"], required=True)
    p.add_argument("--truncate", type=float, nargs=2, metavar=("LO", "HI"),
                   help="fit only this central quantile range of the target grid")
    p.add_argument("--header", action="store_true", help="sample CSV has a header row")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("binary", parents=[common], allow_abbrev=False, help="log odds ratio normal approximation")
    p.add_argument("--trial", type=_trial, action="append", required=True, metavar="NT,YT,NC,YC",
                   help="trial counts; the first is the current trial")
    p.add_argument("--continuity", type=float, default=0.0,
                   help="add this to every cell (0 rejects zero cells)")
    p.set_defaults(func=cmd_binary)

    p = sub.add_parser("scenario", parents=[common], allow_abbrev=False, help="run a scenario config")
    p.add_argument("--config", type=Path, help="YAML/JSON scenario file")
    p.add_argument("--preset", choices=sorted(scenarios.SCENARIO_PRESETS))
    p.add_argument("--with-mcmc", action="store_true", help="add sampler cross-checks")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("equivalence", parents=[common], allow_abbrev=False, help="power prior vs BHM equivalence check")
    p.add_argument("--preset", choices=["fig_a1", "fig_a2", "random"], required=True)
    p.add_argument("--K", type=int, default=None, help="historical datasets for --preset random")
    p.add_argument("--no-mcmc", action="store_true", help="quadrature check only")
    p.set_defaults(func=cmd_equivalence)

    p = sub.add_parser("figure-data", parents=[common], allow_abbrev=False, help="CSV data behind a figure")
    p.add_argument("--figure", choices=list(scenarios.FIGURES), required=True)
    p.set_defaults(func=cmd_figure_data)

    p = sub.add_parser("lupus-demo", parents=[common], allow_abbrev=False, help="binary-trial borrowing demo")
    p.add_argument("--trial", type=_trial, action="append", metavar="NT,YT,NC,YC",
                   help="override the bundled synthetic counts (current trial first)")
    p.add_argument("--no-bernoulli", action="store_true", help="skip the Bernoulli BHM sampler")
    p.set_defaults(func=cmd_lupus_demo)
    return parser


_NUMERIC = (FloatingPointError, ZeroDivisionError, QuadratureError, GridError,
            fitting.FitError, mcmc.SamplerError, np.linalg.LinAlgError)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, val in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, val)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _ToleranceFailure as exc:
        print(f"nppbridge: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except _NUMERIC as exc:
        print(f"nppbridge: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (scenarios.ConfigError, ValueError, TypeError, KeyError, OSError) as exc:
        print(f"nppbridge: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
