"""Grid seminorms and Monte Carlo error estimators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .errors import ShapeError

DEFAULT_GRID_POINTS = 512


@dataclass(frozen=True, eq=False)
class TargetFunction:
    """A function on a box ``[lo, hi]`` (per axis), evaluated on point batches (P, d)."""

    fn: object
    lo: np.ndarray
    hi: np.ndarray
    name: str = "target"

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ShapeError("domain needs matching lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            X = X.reshape(-1, self.dim)
        y = np.asarray(self.fn(X), dtype=float)
        return y.reshape(X.shape[0], -1)

    def grid(self, points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
        return uniform_grid(self.lo, self.hi, points)


def uniform_grid(lo, hi, points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    """Tensor grid with ``points`` equispaced nodes per axis, shape (points^d, d)."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def grid_spec(lo, hi, points: int) -> dict:
    return {"lo": np.atleast_1d(lo).tolist(), "hi": np.atleast_1d(hi).tolist(), "points_per_axis": int(points)}


@dataclass(frozen=True, eq=False)
class Seminorm:
    """``sup_grid``: max over grid points; ``lr_grid``: weighted r-norm over them."""

    kind: str
    grid: np.ndarray
    weights: np.ndarray | None = None
    r: float = 2.0

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.grid, dtype=float))
        if g.shape[0] == 0:
            raise ShapeError("grid must be non-empty")
        object.__setattr__(self, "grid", g)
        if self.kind == "sup_grid":
            return
        if self.kind != "lr_grid":
            raise ValueError(f"unknown seminorm kind {self.kind!r}")
        if self.r < 1.0:
            raise ValueError("lr_grid needs r >= 1")
        w = np.full(g.shape[0], 1.0 / g.shape[0]) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (g.shape[0],) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative, one per grid point, summing to 1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def sup(cls, grid) -> "Seminorm":
        return cls("sup_grid", grid)

    @classmethod
    def lr(cls, grid, r: float = 2.0, weights=None) -> "Seminorm":
        return cls("lr_grid", grid, weights, float(r))

    def __call__(self, f_values, g_values=None) -> float:
        return seminorm_apply(self, f_values, g_values)


def seminorm_apply(s: Seminorm, f_values, g_values=None) -> float:
    """Seminorm of ``f - g`` over the grid.

    Values have shape (P,) or (P, k); vector outputs use the Euclidean norm
    per point.
    """
    f = np.asarray(f_values, dtype=float)
    d = f if g_values is None else f - np.asarray(g_values, dtype=float)
    return float(seminorm_batch(s, d[None])[0])


def seminorm_batch(s: Seminorm, f_values, g_values=None) -> np.ndarray:
    """Seminorm of ``f[b] - g`` for every b; ``f`` has shape (B, P) or (B, P, k)."""
    f = np.asarray(f_values, dtype=float)
    d = f if g_values is None else f - np.asarray(g_values, dtype=float)
    P = s.grid.shape[0]
    if d.ndim not in (2, 3) or d.shape[1] != P:
        raise ShapeError(f"values of shape {d.shape[1:]} do not match a {P}-point grid")
    a = np.abs(d) if d.ndim == 2 else np.sqrt(np.sum(d * d, axis=2))
    if s.kind == "sup_grid":
        return a.max(axis=1)
    return np.sum(s.weights * a**s.r, axis=1) ** (1.0 / s.r)


@dataclass(frozen=True)
class Exceedance:
    count: int
    n: int
    eps: float
    confidence: float
    estimate: float
    lower: float
    upper: float

    def to_json(self) -> dict:
        return {
            "count": self.count,
            "n": self.n,
            "eps": self.eps,
            "confidence": self.confidence,
            "estimate": self.estimate,
            "ci_low": self.lower,
            "ci_high": self.upper,
        }


def wilson(count: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score bounds for a binomial proportion.

    Each end is a one-sided bound at level ``confidence`` (the two-sided
    interval at level 2 * confidence - 1).
    """
    if not 0.5 < confidence < 1.0:
        raise ValueError("confidence must lie in (0.5, 1)")
    ci = binomtest(int(count), int(n)).proportion_ci(confidence_level=2 * confidence - 1, method="wilson")
    return float(ci.low), float(ci.high)


def exceedance(values, eps: float, confidence: float = 0.95) -> Exceedance:
    """Frequency of ``values > eps`` with its Wilson interval."""
    v = np.asarray(values, dtype=float).reshape(-1)
    k = int(np.count_nonzero(v > eps))
    lo, hi = wilson(k, v.size, confidence)
    return Exceedance(k, int(v.size), float(eps), float(confidence), k / v.size, lo, hi)


def draw_values(sampler, n_samples: int, rng) -> np.ndarray:
    """``sampler(rng, i)`` for i = 0..n-1; draw i depends only on (rng, i)."""
    return np.array([float(sampler(rng, i)) for i in range(int(n_samples))])


def exceed_prob(sampler, eps: float, n_samples: int, confidence: float = 0.95, rng=None) -> Exceedance:
    if n_samples < 30:
        raise ValueError("exceed_prob needs at least 30 samples")
    return exceedance(draw_values(sampler, n_samples, rng), eps, confidence)


def lq_from_values(values, q: float) -> float:
    if q < 1:
        raise ValueError("q must be >= 1")
    v = np.abs(np.asarray(values, dtype=float))
    return float(np.mean(v**q) ** (1.0 / q))


def lq_moment(sampler, q: float, n_samples: int, rng=None) -> float:
    """(mean of value^q)^(1/q)."""
    if q < 1:
        raise ValueError("q must be >= 1")
    return lq_from_values(draw_values(sampler, n_samples, rng), q)


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(ys) against log(xs)."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


@dataclass(eq=False)
class ErrorReport:
    """Summary of seminorm errors over independent draws.

    ``sup_estimate`` is the mean over draws of the per-draw error and
    ``sup_max`` its maximum.
    """

    sup_estimate: float
    sup_max: float
    lq_estimate: dict
    exceed: Exceedance
    n_samples: int
    seed: int
    grid: dict
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, values, eps, qs=(2.0,), confidence=0.95, seed=0, grid=None, extra=None):
        v = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("non-finite error values")
        return cls(
            sup_estimate=float(np.mean(v)),
            sup_max=float(np.max(v)),
            lq_estimate={float(q): lq_from_values(v, q) for q in qs},
            exceed=exceedance(v, eps, confidence),
            n_samples=int(v.size),
            seed=int(seed),
            grid=dict(grid or {}),
            extra=dict(extra or {}),
        )

    def to_json(self) -> dict:
        return {
            "sup_estimate": self.sup_estimate,
            "sup_max": self.sup_max,
            "lq_estimate": {f"{q:g}": v for q, v in sorted(self.lq_estimate.items())},
            "exceed_prob": self.exceed.to_json(),
            "n_samples": self.n_samples,
            "seed": self.seed,
            "grid": self.grid,
            "extra": self.extra,
        }
