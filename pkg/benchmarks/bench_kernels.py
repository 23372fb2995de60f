"""Time the compiled kernels against their NumPy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--iterations N]

Every case runs both backends on the same inputs, checks that the outputs
agree, and reports the best wall time of ``--repeat`` runs.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from nppbridge import _backend, mcmc
from nppbridge.core import PriorSpec
from nppbridge.scenarios import FIG_A1, FIG_A2
from nppbridge.transform import induce_prior_v_multi


def best_time(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def max_diff(a, b) -> float:
    if isinstance(a, mcmc.ChainSet):
        return max(float(np.max(np.abs(a.draws[k] - b.draws[k]))) for k in a.draws)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def cases(iterations: int):
    cfg = mcmc.SamplerConfig(chains=4, iterations=iterations, burn_in=iterations // 2, seed=1)
    beta = PriorSpec.beta(2, 2)
    induced = induce_prior_v_multi(beta, FIG_A2)
    rng = np.random.default_rng(0)
    theta = np.linspace(-3, 3, 2049)
    logw, mu, s2 = rng.normal(size=4096), rng.normal(size=4096), rng.uniform(0.1, 1, 4096)

    def mixture(py):
        return (_backend.get("python" if py else "compiled")).mixture_density(theta, logw, mu, s2)

    return {
        "mixture_density (2049 x 4096)": mixture,
        "mwg_bnpp, K=3": lambda py: mcmc.mwg_bnpp(FIG_A2, beta, cfg, python=py),
        "mwg_inpp, K=1": lambda py: mcmc.mwg_inpp(FIG_A1, beta, cfg, python=py),
        "mwg_inpp, K=3": lambda py: mcmc.mwg_inpp(FIG_A2, beta, cfg, python=py),
        "gibbs_bhm, IG prior, K=3": lambda py: mcmc.gibbs_bhm(FIG_A2, PriorSpec.inverse_gamma(2, 1), cfg, python=py),
        "gibbs_bhm, induced prior, K=3": lambda py: mcmc.gibbs_bhm(FIG_A2, induced, cfg, python=py),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--iterations", type=int, default=4000, help="sampler iterations per chain")
    args = ap.parse_args(argv)
    if _backend.NAME != "compiled":
        print("compiled kernels are not available; nothing to compare")
        return 1
    print(f"{'kernel':34s} {'compiled s':>11s} {'numpy s':>10s} {'speed-up':>9s} {'max diff':>10s}")
    for name, run in cases(args.iterations).items():
        tc, oc = best_time(lambda: run(False), args.repeat)
        tp, op = best_time(lambda: run(True), args.repeat)
        print(f"{name:34s} {tc:11.4f} {tp:10.4f} {tp / tc:9.1f} {max_diff(oc, op):10.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
