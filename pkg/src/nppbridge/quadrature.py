"""Gauss-Legendre rules on (0, 1) with endpoint clustering.

Nodes are mapped through ``u = sin^2(pi t / 2)``, which clusters them at both
ends of the interval and removes square-root endpoint singularities (Beta
priors with shape 1/2, the ``a0^{1/2}`` factor) from the integrand.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class QuadratureError(RuntimeError):
    """Raised when node doubling fails to reach the requested tolerance."""


@dataclass(frozen=True)
class UnitRule:
    u: np.ndarray            # nodes in (0, 1)
    one_minus_u: np.ndarray  # 1 - u without cancellation
    log_weight: np.ndarray   # log of the rule weight including du/dt


@lru_cache(maxsize=32)
def unit_rule(n: int) -> UnitRule:
    t, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (t + 1.0)
    half = 0.5 * np.pi * t
    u = np.sin(half) ** 2
    om = np.cos(half) ** 2
    # du/dt = (pi/2) sin(pi t), and dt = w/2
    lw = np.log(0.5 * w) + np.log(0.5 * np.pi * np.sin(np.pi * t))
    for arr in (u, om, lw):
        arr.setflags(write=False)
    return UnitRule(u, om, lw)


def integrate_log(log_f: np.ndarray, rule: UnitRule) -> float:
    """``log`` of the integral of ``exp(log_f)`` over (0, 1) with ``rule``."""
    z = log_f + rule.log_weight
    m = np.max(z)
    if not np.isfinite(m):
        return -np.inf
    return float(m + np.log(np.sum(np.exp(z - m))))
