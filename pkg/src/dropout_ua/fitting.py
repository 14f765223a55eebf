"""Base-network fitting: random hidden features, linear output solve, local refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from . import activations
from .errors import FitDivergedError, ShapeError
from .estimators import DEFAULT_GRID_POINTS, TargetFunction
from .network import Layer, Network


@dataclass(frozen=True)
class Architecture:
    """Layer widths ``[d_0, d_1, ..., d_L]`` and one activation per layer."""

    dims: tuple
    acts: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        acts = tuple(activations.get(a) for a in self.acts)
        if len(dims) < 2 or len(acts) != len(dims) - 1 or min(dims) < 1:
            raise ShapeError("need dims [d_0..d_L] and L activations")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "acts", acts)

    def to_json(self) -> dict:
        return {"dims": list(self.dims), "activations": [a.to_json() for a in self.acts]}

    @classmethod
    def from_json(cls, obj) -> "Architecture":
        return cls(obj["dims"], obj["activations"])


@dataclass(frozen=True, eq=False)
class FitResult:
    net: Network
    error: float
    grid_points: int
    restarts: int


def _random_layers(arch: Architecture, target: TargetFunction, rng: np.random.Generator):
    """Hidden layers with kinks/centres spread over the domain."""
    layers = []
    width = np.maximum(target.hi - target.lo, 1e-12)
    for j, (din, dout) in enumerate(zip(arch.dims[:-2], arch.dims[1:-1])):
        if j == 0:
            # slopes up to a few transitions per unit across the box
            direction = rng.normal(size=(dout, din))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            slope = rng.uniform(2.0, 2.0 * (dout + 2), size=(dout, 1)) / np.linalg.norm(width)
            W = direction * slope
            centres = target.lo + rng.uniform(size=(dout, din)) * width
            b = -np.sum(W * centres, axis=1)
        else:
            W = rng.normal(size=(dout, din)) / np.sqrt(din)
            b = rng.normal(size=dout) * 0.5
        layers.append(Layer(W, b, arch.acts[j]))
    return layers


def _hidden(layers, X):
    h = X
    for layer in layers:
        h = layer(h)
    return h


def _solve_output(layers, arch, X, y):
    H = _hidden(layers, X)
    A = np.hstack([H, np.ones((H.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(A, y, rcond=1e-10)
    return Layer(coef[:-1].T, coef[-1], arch.acts[-1])


def fit_base_network(
    target: TargetFunction,
    arch: Architecture,
    budget: int = 200,
    seed: int = 0,
    grid_points: int = DEFAULT_GRID_POINTS,
    restarts: int = 4,
    refine: bool = True,
) -> FitResult:
    """Fit ``arch`` to ``target`` on a uniform grid; returns the best restart.

    Each restart draws hidden parameters at random, solves the output layer by
    least squares and, if ``refine``, runs at most ``budget`` evaluations of a
    trust-region least-squares refinement on all parameters. The reported error
    is the sup over the grid. Deterministic given ``seed``.
    """
    if arch.dims[0] != target.dim:
        raise ShapeError(f"architecture input {arch.dims[0]} vs target dimension {target.dim}")
    X = target.grid(grid_points)
    y = target(X)
    if y.shape[1] != arch.dims[-1]:
        raise ShapeError(f"target has {y.shape[1]} outputs, architecture {arch.dims[-1]}")
    if not np.all(np.isfinite(y)):
        raise FitDivergedError("target is not finite on the grid")
    best = None
    for k in range(max(1, int(restarts))):
        rng = np.random.default_rng([int(seed) & (2**63 - 1), k])
        hidden = _random_layers(arch, target, rng)
        net = Network(tuple(hidden) + (_solve_output(hidden, arch, X, y),))
        if refine and budget > 0:
            def resid(w, net=net):
                return (net.with_params(w)(X) - y).ravel()

            r0 = resid(net.flat_params())
            if not np.all(np.isfinite(r0)):
                raise FitDivergedError("non-finite loss at initialisation")
            sol = least_squares(resid, net.flat_params(), max_nfev=int(budget), method="trf", x_scale="jac")
            if not np.all(np.isfinite(sol.fun)):
                raise FitDivergedError("non-finite loss during refinement")
            if np.max(np.abs(sol.fun)) <= np.max(np.abs(r0)):
                net = net.with_params(sol.x)
        err = float(np.max(np.abs(net(X) - y)))
        if not np.isfinite(err):
            raise FitDivergedError("non-finite fit error")
        if best is None or err < best.error:
            best = FitResult(net, err, grid_points, k + 1)
    return best
