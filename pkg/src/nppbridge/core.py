"""Domain types shared by every module: data summaries, priors, density grids.

All marginal posteriors and induced priors in the package are represented as
:class:`DensityGrid` objects integrated with the trapezoid rule.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import special


class GridError(ValueError):
    """Raised for malformed or unnormalizable density grids."""


def _frozen(a: Any) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def trapezoid(y: np.ndarray, x: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def cumulative_trapezoid(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    out = np.empty_like(y)
    out[0] = 0.0
    np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x), out=out[1:])
    return out


# ---------------------------------------------------------------------------
# Data summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalSummary:
    """Sufficient statistics of one i.i.d. normal dataset with known variance."""

    n: int
    ybar: float
    sigma2: float

    def __post_init__(self) -> None:
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if not math.isfinite(self.ybar):
            raise ValueError(f"ybar must be finite, got {self.ybar!r}")
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive and finite, got {self.sigma2!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "ybar", float(self.ybar))
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def precision(self) -> float:
        """Precision of the sample mean, ``n / sigma2``."""
        return self.n / self.sigma2

    @classmethod
    def from_data(cls, y: Iterable[float], sigma2: float) -> "NormalSummary":
        y = np.asarray(list(y), dtype=float)
        return cls(n=y.size, ybar=float(y.mean()), sigma2=sigma2)

    def to_dict(self) -> dict:
        return {"n": self.n, "ybar": self.ybar, "sigma2": self.sigma2}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalSummary":
        return cls(n=d["n"], ybar=d["ybar"], sigma2=d["sigma2"])


@dataclass(frozen=True)
class StudySet:
    """A current dataset together with ``K >= 1`` historical datasets."""

    current: NormalSummary
    historical: tuple[NormalSummary, ...]

    def __post_init__(self) -> None:
        hist = tuple(self.historical)
        if len(hist) < 1:
            raise ValueError("at least one historical dataset is required")
        for h in (self.current,) + hist:
            if not isinstance(h, NormalSummary):
                raise TypeError(f"expected NormalSummary, got {type(h).__name__}")
        object.__setattr__(self, "historical", hist)

    @property
    def K(self) -> int:
        return len(self.historical)

    @property
    def prec0(self) -> np.ndarray:
        """Historical precisions ``n0k / sigma2_0k``."""
        return np.array([h.precision for h in self.historical])

    @property
    def ybar0(self) -> np.ndarray:
        return np.array([h.ybar for h in self.historical])

    def permuted(self, order: Sequence[int]) -> "StudySet":
        return StudySet(self.current, tuple(self.historical[i] for i in order))

    def to_dict(self) -> dict:
        return {
            "current": self.current.to_dict(),
            "historical": [h.to_dict() for h in self.historical],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudySet":
        return cls(
            NormalSummary.from_dict(d["current"]),
            tuple(NormalSummary.from_dict(h) for h in d["historical"]),
        )


# ---------------------------------------------------------------------------
# Density grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityGrid:
    """A density tabulated on strictly increasing points.

    Parameters
    ----------
    points : array_like
        Strictly increasing abscissae.
    density : array_like
        Nonnegative density values, same length as ``points``.
    normalized : bool
        Whether the trapezoid integral is one (checked to 1e-8).
    """

    points: np.ndarray
    density: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        x = _frozen(self.points)
        p = _frozen(self.density)
        if x.ndim != 1 or p.shape != x.shape:
            raise GridError("points and density must be 1-D arrays of equal length")
        if x.size < 2:
            raise GridError("a grid needs at least two points")
        if not np.all(np.isfinite(x)) or np.any(np.diff(x) <= 0):
            raise GridError("grid points must be finite and strictly increasing")
        if np.any(np.isnan(p)) or np.any(p < 0):
            raise GridError("density values must be nonnegative and not NaN")
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "density", p)
        if self.normalized and abs(self.integral() - 1.0) > 1e-8:
            raise GridError(f"grid flagged normalized but integrates to {self.integral()!r}")

    def __len__(self) -> int:
        return self.points.size

    def integral(self) -> float:
        return trapezoid(self.density, self.points)

    def expect(self, fn) -> float:
        """Trapezoid expectation of ``fn(points)``; requires a normalized grid."""
        return trapezoid(self.density * fn(self.points), self.points)

    def mean(self) -> float:
        return trapezoid(self.density * self.points, self.points)

    def sd(self) -> float:
        m = self.mean()
        return math.sqrt(max(trapezoid(self.density * (self.points - m) ** 2, self.points), 0.0))

    def cdf(self) -> np.ndarray:
        c = cumulative_trapezoid(self.density, self.points)
        return c / c[-1]

    def quantile(self, q) -> np.ndarray | float:
        """Quantiles by inverting the piecewise-linear trapezoid CDF."""
        c = self.cdf()
        # flat stretches make the CDF non-strict; keep the first point of each run
        keep = np.concatenate(([True], np.diff(c) > 0))
        return np.interp(q, c[keep], self.points[keep])

    def pdf(self, x) -> np.ndarray:
        return np.interp(x, self.points, self.density, left=0.0, right=0.0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Inverse-CDF sampling with exact inversion inside each trapezoid cell."""
        c = cumulative_trapezoid(self.density, self.points)
        total = c[-1]
        u = rng.random(size) * total
        i = np.clip(np.searchsorted(c, u, side="right") - 1, 0, self.points.size - 2)
        x0 = self.points[i]
        h = self.points[i + 1] - x0
        p0 = self.density[i]
        slope = (self.density[i + 1] - p0) / h
        r = u - c[i]
        # solve p0*t + slope*t^2/2 = r for t in [0, h]
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = np.sqrt(np.maximum(p0 * p0 + 2.0 * slope * r, 0.0))
            t = np.where(np.abs(slope) > 1e-14 * np.maximum(p0, 1e-300) / h,
                         2.0 * r / (p0 + disc), r / np.where(p0 > 0, p0, 1.0))
        return x0 + np.clip(t, 0.0, h)

    # serialization -------------------------------------------------------

    def to_csv(self, path=None, header: tuple[str, str] = ("point", "density")) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for x, p in zip(self.points, self.density):
            w.writerow([fmt(x), fmt(p)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source, normalized: bool | None = None) -> "DensityGrid":
        if isinstance(source, str) and "\n" not in source:
            with open(source, encoding="utf-8") as fh:
                text = fh.read()
        else:
            text = source if isinstance(source, str) else source.read()
        rows = list(csv.reader(io.StringIO(text)))
        body = [r for r in rows[1:] if r]
        x = np.array([float(r[0]) for r in body])
        p = np.array([float(r[1]) for r in body])
        if normalized is None:
            normalized = abs(trapezoid(p, x) - 1.0) <= 1e-8
        return cls(x, p, normalized)

    def to_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "density": self.density.tolist(),
            "normalized": self.normalized,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DensityGrid":
        return cls(np.asarray(d["points"]), np.asarray(d["density"]), bool(d.get("normalized", False)))


def normalize(grid: DensityGrid) -> DensityGrid:
    """Rescale ``grid`` so its trapezoid integral is exactly one."""
    if not np.all(np.isfinite(grid.density)):
        raise GridError("density contains non-finite values")
    z = grid.integral()
    if not z > 0:
        raise GridError("density integrates to zero; cannot normalize")
    out = DensityGrid(grid.points, grid.density / z, normalized=False)
    object.__setattr__(out, "normalized", True)
    return out


def grid_from_log_density(points: np.ndarray, logp: np.ndarray) -> DensityGrid:
    """Build a normalized grid from unnormalized log-density values."""
    logp = np.asarray(logp, dtype=float)
    if np.any(np.isnan(logp)):
        raise GridError("log density contains NaN")
    finite = np.isfinite(logp)
    if not np.any(finite):
        raise GridError("log density is -inf everywhere")
    m = np.max(logp[finite])
    dens = np.where(finite, np.exp(logp - m), 0.0)
    return normalize(DensityGrid(points, dens))


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    sd: float
    credible_interval: tuple[float, float]
    level: float

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "sd": self.sd,
            "credible_interval": list(self.credible_interval),
            "level": self.level,
        }


def summarize(grid: DensityGrid, level: float = 0.95) -> PosteriorSummary:
    """Mean, sd and equal-tailed credible interval of a normalized grid."""
    if not grid.normalized:
        raise GridError("summarize requires a normalized grid")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level!r}")
    tail = 0.5 * (1.0 - level)
    lo, hi = grid.quantile([tail, 1.0 - tail])
    return PosteriorSummary(grid.mean(), grid.sd(), (float(lo), float(hi)), float(level))


def ks_distance(a: DensityGrid, b: DensityGrid) -> float:
    """Sup distance between the CDFs of two grids sharing the same points."""
    if a.points.shape != b.points.shape or not np.allclose(a.points, b.points, rtol=0, atol=0):
        raise GridError("grids must share identical points")
    return float(np.max(np.abs(a.cdf() - b.cdf())))


def ks_sample_vs_grid(samples: np.ndarray, grid: DensityGrid) -> float:
    """One-sample KS statistic of ``samples`` against the grid CDF."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    F = np.interp(x, grid.points, grid.cdf(), left=0.0, right=1.0)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

_UNIT = "unit"          # (0, 1)
_POSITIVE = "positive"  # (0, inf)

_KIND_SUPPORT = {
    "beta": _UNIT,
    "uniform": _UNIT,
    "inverse_gamma": _POSITIVE,
    "half_normal": _POSITIVE,
}


@dataclass(frozen=True)
class PriorSpec:
    """A univariate prior on (0, 1) or (0, inf).

    Use the constructors :meth:`beta`, :meth:`inverse_gamma`, :meth:`uniform01`,
    :meth:`half_normal` and :meth:`tabulated` rather than the raw fields.
    """

    kind: str
    params: tuple[float, ...] = ()
    grid: DensityGrid | None = field(default=None, compare=False)
    support: str = _UNIT

    def __post_init__(self) -> None:
        if self.kind == "tabulated":
            if self.grid is None:
                raise ValueError("tabulated prior needs a grid")
            if abs(self.grid.integral() - 1.0) > 1e-8:
                raise ValueError("tabulated prior grid must integrate to 1 within 1e-8")
            if self.grid.points[0] < 0 or (self.support == _UNIT and self.grid.points[-1] > 1):
                raise ValueError("tabulated prior grid lies outside its support")
            return
        if self.kind not in _KIND_SUPPORT:
            raise ValueError(f"unknown prior kind {self.kind!r}")
        object.__setattr__(self, "support", _KIND_SUPPORT[self.kind])
        params = tuple(float(p) for p in self.params)
        expected = {"beta": 2, "uniform": 0, "inverse_gamma": 2, "half_normal": 1}[self.kind]
        if len(params) != expected:
            raise ValueError(f"{self.kind} prior takes {expected} parameters, got {len(params)}")
        if any(not (p > 0 and math.isfinite(p)) for p in params):
            raise ValueError(f"{self.kind} parameters must be positive, got {params}")
        object.__setattr__(self, "params", params)

    # constructors ----------------------------------------------------------

    @classmethod
    def beta(cls, a: float, b: float) -> "PriorSpec":
        return cls("beta", (a, b))

    @classmethod
    def uniform01(cls) -> "PriorSpec":
        return cls("uniform")

    @classmethod
    def inverse_gamma(cls, c: float, d: float) -> "PriorSpec":
        """Inverse gamma with shape ``c`` and scale ``d`` (mean ``d/(c-1)``)."""
        return cls("inverse_gamma", (c, d))

    @classmethod
    def half_normal(cls, scale: float) -> "PriorSpec":
        return cls("half_normal", (scale,))

    @classmethod
    def tabulated(cls, grid: DensityGrid, support: str | None = None) -> "PriorSpec":
        if support is None:
            support = _UNIT if grid.points[-1] <= 1.0 else _POSITIVE
        return cls("tabulated", (), grid, support)

    # evaluation ------------------------------------------------------------

    @property
    def on_unit_interval(self) -> bool:
        return self.support == _UNIT

    def logpdf(self, x, one_minus_x=None) -> np.ndarray:
        """Log density; ``one_minus_x`` keeps precision when ``x`` is near 1."""
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, -np.inf)
        if self.support == _UNIT:
            omx = 1.0 - x if one_minus_x is None else np.broadcast_to(one_minus_x, x.shape)
            inside = (x > 0) & (omx > 0)
        else:
            inside = x > 0
        xi = x[inside]
        if self.kind == "beta":
            a, b = self.params
            val = (a - 1) * np.log(xi) + (b - 1) * np.log(omx[inside]) - special.betaln(a, b)
        elif self.kind == "uniform":
            val = np.zeros_like(xi)
        elif self.kind == "inverse_gamma":
            c, d = self.params
            val = c * math.log(d) - special.gammaln(c) - (c + 1) * np.log(xi) - d / xi
        elif self.kind == "half_normal":
            (s,) = self.params
            val = 0.5 * math.log(2.0 / math.pi) - math.log(s) - 0.5 * (xi / s) ** 2
        else:
            with np.errstate(divide="ignore"):
                val = np.log(self.grid.pdf(xi))
        out[inside] = val
        return out

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "beta":
            a, b = self.params
            return special.betainc(a, b, np.clip(x, 0.0, 1.0))
        if self.kind == "uniform":
            return np.clip(x, 0.0, 1.0)
        if self.kind == "inverse_gamma":
            c, d = self.params
            with np.errstate(divide="ignore"):
                return np.where(x > 0, special.gammaincc(c, d / np.maximum(x, 1e-300)), 0.0)
        if self.kind == "half_normal":
            (s,) = self.params
            return np.where(x > 0, special.erf(np.maximum(x, 0.0) / (s * math.sqrt(2.0))), 0.0)
        return np.interp(x, self.grid.points, self.grid.cdf(), left=0.0, right=1.0)

    def sf(self, x, one_minus_x=None) -> np.ndarray:
        """Survival function ``P(X > x)``, accurate near the upper end of (0, 1)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "beta" and one_minus_x is not None:
            a, b = self.params
            return special.betainc(b, a, np.clip(one_minus_x, 0.0, 1.0))
        if self.kind == "uniform" and one_minus_x is not None:
            return np.clip(np.asarray(one_minus_x, dtype=float), 0.0, 1.0)
        if self.kind == "beta":
            a, b = self.params
            return special.betainc(b, a, np.clip(1.0 - x, 0.0, 1.0))
        if self.kind == "inverse_gamma":
            c, d = self.params
            with np.errstate(divide="ignore"):
                return np.where(x > 0, special.gammainc(c, d / np.maximum(x, 1e-300)), 1.0)
        if self.kind == "half_normal":
            (s,) = self.params
            return np.where(x > 0, special.erfc(np.maximum(x, 0.0) / (s * math.sqrt(2.0))), 1.0)
        return 1.0 - self.cdf(x)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "beta":
            return rng.beta(*self.params, size=size)
        if self.kind == "uniform":
            return rng.random(size)
        if self.kind == "inverse_gamma":
            c, d = self.params
            return d / rng.gamma(c, 1.0, size=size)
        if self.kind == "half_normal":
            return np.abs(rng.normal(0.0, self.params[0], size=size))
        return self.grid.sample(rng, int(np.prod(size))).reshape(size)

    # serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind, "params": list(self.params)}
        if self.kind == "tabulated":
            d["grid"] = self.grid.to_dict()
            d["support"] = self.support
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        if d["kind"] == "tabulated":
            return cls.tabulated(DensityGrid.from_dict(d["grid"]), d.get("support"))
        return cls(d["kind"], tuple(d.get("params", ())))

    @classmethod
    def parse(cls, text: str) -> "PriorSpec":
        """Parse ``beta:2,2``, ``ig:3,10``, ``uniform``, ``halfnormal:1``."""
        name, _, rest = text.strip().partition(":")
        name = name.lower().replace("-", "_")
        args = tuple(float(t) for t in rest.split(",") if t.strip())
        aliases = {
            "beta": "beta", "uniform": "uniform", "uniform01": "uniform", "unif": "uniform",
            "ig": "inverse_gamma", "inverse_gamma": "inverse_gamma", "invgamma": "inverse_gamma",
            "halfnormal": "half_normal", "half_normal": "half_normal", "hn": "half_normal",
        }
        if name not in aliases:
            raise ValueError(f"cannot parse prior {text!r}")
        return cls(aliases[name], args)

    def __str__(self) -> str:
        if self.kind == "tabulated":
            return f"tabulated[{len(self.grid)}]"
        args = ",".join(f"{p:g}" for p in self.params)
        return f"{self.kind}({args})"


# ---------------------------------------------------------------------------
# Formatting helpers
# ---------------------------------------------------------------------------


def fmt(x: float) -> str:
    """Deterministic 17-significant-digit float formatting."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _to_jsonable(obj):
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) or isinstance(obj, np.floating):
        return _JsonFloat(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if hasattr(obj, "to_dict"):
        return _to_jsonable(obj.to_dict())
    return obj


class _JsonFloat(float):
    pass


class _Encoder(json.JSONEncoder):
    def iterencode(self, o, _one_shot=False):
        return _iterencode(o, self.indent, 0)


def _iterencode(o, indent, level):
    pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end = "" if indent is None else "\n" + " " * (indent * level)
    sep = ", " if indent is None else ","
    if isinstance(o, _JsonFloat):
        yield "null" if not math.isfinite(o) else fmt(o)
    elif isinstance(o, dict):
        if not o:
            yield "{}"
            return
        yield "{"
        for i, (k, v) in enumerate(o.items()):
            yield (sep if i else "") + pad + json.dumps(k) + ": "
            yield from _iterencode(v, indent, level + 1)
        yield end + "}"
    elif isinstance(o, list):
        if not o:
            yield "[]"
            return
        yield "["
        for i, v in enumerate(o):
            yield (sep if i else "") + pad
            yield from _iterencode(v, indent, level + 1)
        yield end + "]"
    else:
        yield json.dumps(o)


def dumps(obj, indent: int | None = 2) -> str:
    """JSON with floats written to 17 significant digits (non-finite -> null)."""
    return "".join(_Encoder(indent=indent).iterencode(_to_jsonable(obj)))
