"""Normal approximation for two-arm binary trials on the log-odds-ratio scale.

A trial enters the normal machinery as a summary with ``n = 1``, mean equal to
the estimated log odds ratio and known variance equal to its asymptotic
variance.  Every bridge formula depends on ``n0 / sigma0^2`` only, so this is
equivalent to any other packaging with the same precision.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .core import NormalSummary


class ZeroCellError(ValueError):
    """An arm has no responders or no non-responders."""


@dataclass(frozen=True)
class TwoArmBinomialSummary:
    """Responder counts ``y_t`` of ``n_t`` (treatment) and ``y_c`` of ``n_c`` (control)."""

    n_t: int
    y_t: int
    n_c: int
    y_c: int

    def __post_init__(self) -> None:
        for name in ("n_t", "y_t", "n_c", "y_c"):
            val = getattr(self, name)
            if isinstance(val, bool) or int(val) != val:
                raise ValueError(f"{name} must be an integer, got {val!r}")
            object.__setattr__(self, name, int(val))
        if self.n_t < 1 or self.n_c < 1:
            raise ValueError("arm sizes must be positive")
        if not (0 <= self.y_t <= self.n_t and 0 <= self.y_c <= self.n_c):
            raise ValueError("responder counts must lie between 0 and the arm size")

    @property
    def has_zero_cell(self) -> bool:
        return self.y_t in (0, self.n_t) or self.y_c in (0, self.n_c)

    def swapped(self) -> "TwoArmBinomialSummary":
        return TwoArmBinomialSummary(self.n_c, self.y_c, self.n_t, self.y_t)

    def to_dict(self) -> dict:
        return {"n_t": self.n_t, "y_t": self.y_t, "n_c": self.n_c, "y_c": self.y_c}

    @classmethod
    def from_dict(cls, d: dict) -> "TwoArmBinomialSummary":
        return cls(d["n_t"], d["y_t"], d["n_c"], d["y_c"])


@dataclass(frozen=True)
class LogOrApprox:
    theta_hat: float
    var_hat: float

    def __post_init__(self) -> None:
        if not (self.var_hat > 0 and math.isfinite(self.var_hat)):
            raise ValueError(f"var_hat must be positive and finite, got {self.var_hat}")

    def to_dict(self) -> dict:
        return {"theta_hat": self.theta_hat, "var_hat": self.var_hat}


def log_or(trial: TwoArmBinomialSummary, continuity: float = 0.0) -> LogOrApprox:
    """Log odds ratio (treatment vs control) and its asymptotic variance.

    Parameters
    ----------
    trial
        Two-arm counts.
    continuity
        Added to every cell when positive (0.5 is the usual choice).  The
        default of 0 rejects zero cells instead of correcting them.

    Examples
    --------
    >>> r = log_or(TwoArmBinomialSummary(50, 30, 50, 20))
    >>> round(r.theta_hat, 5), round(r.var_hat, 5)
    (0.81093, 0.16667)
    """
    if continuity < 0:
        raise ValueError("continuity correction must be non-negative")
    if trial.has_zero_cell and continuity == 0:
        raise ZeroCellError(
            f"zero cell in {trial}; pass continuity=0.5 to apply a continuity correction"
        )
    a, b = trial.y_t + continuity, trial.n_t - trial.y_t + continuity
    c, d = trial.y_c + continuity, trial.n_c - trial.y_c + continuity
    theta = math.log(a / b) - math.log(c / d)
    # 1/(n p) + 1/(n (1-p)) per arm, in cell-count form
    var = 1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d
    return LogOrApprox(theta, var)


def to_normal_summary(approx: LogOrApprox) -> NormalSummary:
    """Package a log-OR estimate as a normal summary with sample size one."""
    return NormalSummary(1, approx.theta_hat, approx.var_hat)


def trial_summary(trial: TwoArmBinomialSummary, continuity: float = 0.0) -> NormalSummary:
    return to_normal_summary(log_or(trial, continuity))


# Synthetic counts with the published sample sizes of the three lupus trials
# (pediatric current trial first, then the two adult trials).  The responder
# counts are invented for demonstration; the real counts are not public.
SYNTHETIC_LUPUS = (
    TwoArmBinomialSummary(52, 27, 40, 17),
    TwoArmBinomialSummary(274, 158, 274, 120),
    TwoArmBinomialSummary(288, 125, 289, 98),
)
