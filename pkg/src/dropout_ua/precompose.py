"""Replacement of the first layer by a randomized two-sublayer precomposition.

For a leaf, with i = 1..2N and s_i = (-1)^i,

    Xi(x) = sigma_1( (1/N) sum_i s_i (V * F^i) sigma_0(s_i alpha (G^i * x)) + b^(1) ),

where F^i are filter matrices shaped like W^(1), G^i are filters on the input
coordinates (the diagonal of a d_0 x d_0 matrix) and

    V_rc = W^(1)_rc / (alpha (sigma_- + sigma_+) E[F_rc] E[G_cc]).

The paired signs turn sigma_0 into a symmetric difference quotient, so for
ReLU, leaky ReLU and the identity the construction is exact in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import activations
from .activations import Activation
from .errors import InadmissibleActivationError, ShapeError, StructuralError
from .filters import FilterModel, matrix_dropconnect, unit_mass
from .network import Network
from .rng import RandomSource
from .tree import DropoutTree, eval_phi

CHUNK_ELEMENTS = 1 << 22


def q_condition_check(sigma0, Q: float) -> bool:
    """4 (|sigma_-| + |sigma_+|) / |sigma_- + sigma_+| < Q."""
    a = activations.get(sigma0)
    s = a.sigma_minus + a.sigma_plus
    if s == 0.0:
        raise InadmissibleActivationError(f"{a.kind}: sigma_- + sigma_+ = 0")
    return bool(4.0 * (abs(a.sigma_minus) + abs(a.sigma_plus)) / abs(s) < Q)


@dataclass(frozen=True, eq=False)
class Precomposition:
    base: Network
    alpha: float
    N: int
    sigma0: Activation
    mu: FilterModel
    nu: FilterModel

    def __post_init__(self):
        s0 = activations.get(self.sigma0)
        s0.check_zeroth_layer()
        object.__setattr__(self, "sigma0", s0)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if int(self.N) < 1:
            raise ValueError("N must be positive")
        object.__setattr__(self, "N", int(self.N))
        W = self.base.layers[0].weight
        if self.mu.n != W.size:
            raise ShapeError(f"mu covers {self.mu.n} entries, W^(1) has {W.size}")
        if self.nu.n != W.shape[1]:
            raise ShapeError(f"nu covers {self.nu.n} entries, input dimension is {W.shape[1]}")

    @property
    def W(self) -> np.ndarray:
        return self.base.layers[0].weight

    @property
    def EF(self) -> np.ndarray:
        return self.mu.expectation().reshape(self.W.shape)

    @property
    def EG(self) -> np.ndarray:
        return self.nu.expectation()

    @property
    def V(self) -> np.ndarray:
        s = self.sigma0.sigma_minus + self.sigma0.sigma_plus
        return self.W / (self.alpha * s * self.EF * self.EG[None, :])

    def with_params(self, alpha=None, N=None) -> "Precomposition":
        return Precomposition(self.base, self.alpha if alpha is None else alpha,
                              self.N if N is None else N, self.sigma0, self.mu, self.nu)

    def to_json(self) -> dict:
        return {"alpha": self.alpha, "N": self.N, "sigma0": self.sigma0.to_json(),
                "mu": self.mu.to_json(), "nu": self.nu.to_json()}


def precomposition(base: Network, alpha: float, N: int, sigma0="relu", p: float = 0.5, p_input=None):
    """Precomposition with entrywise dropconnect filters (drop ``p``) on W^(1)
    and on the inputs (drop ``p_input``, default ``p``)."""
    W = base.layers[0].weight
    p_in = p if p_input is None else p_input
    mu = matrix_dropconnect(*W.shape, p, floor=1.0 - p) if p > 0 else unit_mass(W.size)
    nu = matrix_dropconnect(1, W.shape[1], p_in, floor=1.0 - p_in) if p_in > 0 else unit_mass(W.shape[1])
    return Precomposition(base, alpha, N, sigma0, mu, nu)


def _signs(N: int) -> np.ndarray:
    # s_i = (-1)^i for i = 1..2N
    return np.where(np.arange(1, 2 * N + 1) % 2 == 0, 1.0, -1.0)


def xi_values(pre: Precomposition, leaves, X, mode: str = "sampled", rng: RandomSource | None = None):
    """Xi at every leaf in ``leaves`` on points X (P, d_0); returns (n_leaves, P, d_1).

    Copy i of leaf l draws F and G as draw ``l * 2N + i`` of the streams
    ``rng.child("F")`` and ``rng.child("G")``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    leaves = np.asarray(leaves, dtype=np.int64).reshape(-1)
    layer = pre.base.layers[0]
    d1, d0 = pre.W.shape
    if X.shape[1] != d0:
        raise ShapeError(f"inputs have dimension {X.shape[1]}, expected {d0}")
    V, a, s0 = pre.V, pre.alpha, pre.sigma0
    if mode == "avg-filt":
        VF = V * pre.EF
        g = pre.EG
        pre_act = (s0(a * g * X) - s0(-a * g * X)) @ VF.T
        out = layer.activation(pre_act + layer.bias)
        return np.broadcast_to(out, (leaves.size,) + out.shape).copy()
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    N2 = 2 * pre.N
    s = _signs(pre.N)
    rF, rG = rng.child("F"), rng.child("G")
    out = np.empty((leaves.size, X.shape[0], d1))
    chunk = max(1, CHUNK_ELEMENTS // max(1, N2 * X.shape[0] * max(d0, d1)))
    for c0 in range(0, leaves.size, chunk):
        ls = leaves[c0:c0 + chunk]
        idx = (ls[:, None] * N2 + np.arange(N2)[None, :]).ravel()
        F = pre.mu.sample_at(rF, idx).reshape(ls.size, N2, d1, d0)
        G = pre.nu.sample_at(rG, idx).reshape(ls.size, N2, d0)
        inner = s0(s[None, :, None, None] * a * G[:, :, None, :] * X[None, None, :, :])
        signedVF = s[None, :, None, None] * V[None, None] * F
        pre_act = np.einsum("cirk,cipk->cpr", signedVF, inner) / pre.N
        out[c0:c0 + ls.size] = layer.activation(pre_act + layer.bias)
    return out


def precompose_eval(pre: Precomposition, leaf: int, x, mode: str = "sampled", rng: RandomSource | None = None):
    """Xi at one leaf for a point (d_0,) or a batch (P, d_0)."""
    x = np.asarray(x, dtype=float)
    out = xi_values(pre, [leaf], np.atleast_2d(x), mode, rng)[0]
    return out[0] if x.ndim == 1 else out


def nn_eval(tree: DropoutTree, pre: Precomposition, X, mode: str = "sampled", rng: RandomSource | None = None,
            return_levels: bool = False):
    """The full network: x copied to every leaf, precomposed, then the tree recursion.

    ``mode="avg-filt"`` replaces every filter by its expectation. Sampled mode
    uses ``rng.child("pre")`` for the precomposition and ``rng.child("tree")``
    for the tree edges.
    """
    if not tree.is_full:
        raise StructuralError("nn_eval needs a full tree (all leaves at level 1)")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if mode == "avg-filt":
        leaf_vals = xi_values(pre, tree.leaves, X, "avg-filt")
        return eval_phi(tree, leaf_vals, "deterministic", return_levels=return_levels)
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    leaf_vals = xi_values(pre, tree.leaves, X, "sampled", rng.child("pre"))
    return eval_phi(tree, leaf_vals, "sampled", rng.child("tree"), return_levels=return_levels)
