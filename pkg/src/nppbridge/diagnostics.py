"""Chain diagnostics: rank-normalized split R-hat, bulk ESS and MCSE.

Draws are arrays of shape ``(chains, draws)`` with burn-in already removed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

MIN_CHAINS = 2
MIN_DRAWS = 100


class DiagnosticsError(ValueError):
    """Too few chains or draws to estimate mixing."""


@dataclass(frozen=True)
class Diagnostic:
    ess: float
    split_rhat: float
    mcse: float

    def to_dict(self) -> dict:
        return {"ess": self.ess, "split_rhat": self.split_rhat, "mcse": self.mcse}


def _check(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DiagnosticsError(f"draws must have shape (chains, draws), got {x.shape}")
    if x.shape[0] < MIN_CHAINS or x.shape[1] < MIN_DRAWS:
        raise DiagnosticsError(
            f"need >= {MIN_CHAINS} chains and >= {MIN_DRAWS} post-burn-in draws, got {x.shape}"
        )
    return x


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = stats.rankdata(x, method="average").reshape(x.shape)
    return stats.norm.ppf((r - 0.375) / (x.size + 0.25))


def _rhat(x: np.ndarray) -> float:
    m, n = x.shape
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0.0:
        return 1.0 if B == 0.0 else np.inf
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def split_rhat(draws) -> float:
    """Rank-normalized split R-hat: max of the bulk and folded-tail versions."""
    x = _split(_check(draws))
    bulk = _rhat(_rank_normalize(x))
    tail = _rhat(_rank_normalize(np.abs(x - np.median(x))))
    return max(bulk, tail)


def _autocov(x: np.ndarray) -> np.ndarray:
    """Autocovariance of each row via FFT (biased estimator, lag 0..n-1)."""
    n = x.shape[1]
    y = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, size, axis=1)
    return np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n] / n


def _ess(x: np.ndarray) -> float:
    m, n = x.shape
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1.0)
    W = chain_var.mean()
    var_plus = W * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus == 0.0:
        return float(m * n)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer initial positive sequence on paired sums, made monotone
    pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
    stop = np.argmax(pairs <= 0) if np.any(pairs <= 0) else pairs.size
    pairs = np.minimum.accumulate(pairs[:stop])
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def ess_bulk(draws) -> float:
    """Bulk effective sample size from rank-normalized split chains."""
    return _ess(_rank_normalize(_split(_check(draws))))


def diagnose(draws) -> Diagnostic:
    """ESS, split R-hat and Monte Carlo standard error of the mean."""
    x = _check(draws)
    ess = ess_bulk(x)
    return Diagnostic(ess=ess, split_rhat=split_rhat(x), mcse=float(x.std(ddof=1) / np.sqrt(ess)))
