"""Coefficients ``a_V`` that write a network as a signed sum of filtered expectations.

For every subset ``V`` of blocks, let ``f^V`` be a filter with law ``models[V]``.
A :class:`CoefficientTable` holds reals ``a_V`` such that, for every network
and every parameter vector ``w``,

    Psi(x, w) = sum_V a_V * E[ Psi(x, (w * 1_V) * f^V) ].

Subsets are bitmasks over blocks (bit ``s`` is block ``s``); ``blocks`` maps
each block to its parameter positions, so a subset lifts to parameter indices.
Only the per-subset marginal laws matter: how the ``f^V`` for different ``V``
are coupled never enters the identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidProbabilityError, PreconditionError, ShapeError, UnsupportedModelError
from .filters import FilterModel, model_for, subset_bits
from .network import Network, eval_masked_batch

MAX_TABLE_BLOCKS = 12


@dataclass(frozen=True, eq=False)
class CoefficientTable:
    r: int
    entries: np.ndarray
    blocks: tuple | None = None

    def __post_init__(self):
        a = np.array(self.entries, dtype=float).reshape(-1)
        if a.shape != (1 << self.r,):
            raise ShapeError(f"table over {self.r} blocks needs {1 << self.r} entries, got {a.size}")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)
        if self.blocks is not None:
            blocks = tuple(tuple(int(i) for i in b) for b in self.blocks)
            if len(blocks) != self.r:
                raise ShapeError("one parameter block per table block required")
            object.__setattr__(self, "blocks", blocks)

    def __getitem__(self, subset) -> float:
        return float(self.entries[_as_bitmask(subset)])

    @property
    def full(self) -> int:
        return (1 << self.r) - 1

    def total(self) -> float:
        return float(np.sum(self.entries))

    def lift(self, subset) -> list[int]:
        """Parameter indices of a block subset."""
        if self.blocks is None:
            raise ValueError("table carries no block embedding")
        S = _as_bitmask(subset)
        return sorted(i for s, b in enumerate(self.blocks) if S >> s & 1 for i in b)

    def indicator(self, subset, n: int) -> np.ndarray:
        """0/1 vector of length ``n`` marking the lifted subset."""
        out = np.zeros(n)
        out[self.lift(subset)] = 1.0
        return out

    def with_entry(self, subset, value) -> "CoefficientTable":
        a = np.array(self.entries)
        a[_as_bitmask(subset)] = value
        return CoefficientTable(self.r, a, self.blocks)

    def to_json(self) -> dict:
        out = {
            "r": self.r,
            "entries": [
                {"subset": [s for s in range(self.r) if V >> s & 1], "coeff": float(a)}
                for V, a in enumerate(self.entries)
            ],
        }
        if self.blocks is not None:
            out["blocks"] = [list(b) for b in self.blocks]
        return out

    @classmethod
    def from_json(cls, obj) -> "CoefficientTable":
        r = int(obj["r"])
        a = np.zeros(1 << r)
        seen = set()
        for e in obj["entries"]:
            V = _as_bitmask(e["subset"])
            a[V] = float(e["coeff"])
            seen.add(V)
        if len(seen) != 1 << r:
            raise ShapeError("table JSON must list every subset")
        return cls(r, a, obj.get("blocks"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "CoefficientTable":
        return cls.from_json(json.loads(Path(path).read_text()))


def _as_bitmask(subset) -> int:
    if isinstance(subset, (int, np.integer)):
        return int(subset)
    return sum(1 << int(s) for s in set(subset))


def coeffs_closed_form(p, r: int | None = None, blocks=None) -> CoefficientTable:
    """Coefficients for independent blocks with drop probabilities ``p``.

    a_V = prod_{i in V} 1/(1-p_i) * prod_{i not in V} (-p_i/(1-p_i)).
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if r is not None and p.size == 1 and r > 1:
        p = np.full(r, p[0])
    if r is not None and p.size != r:
        raise ShapeError(f"{p.size} drop probabilities for {r} blocks")
    if np.any(~(p >= 0.0)) or np.any(p >= 1.0):
        raise InvalidProbabilityError("drop probabilities must lie in [0, 1)")
    q = 1.0 - p
    bits = subset_bits(p.size)
    return CoefficientTable(p.size, np.prod(np.where(bits, 1.0 / q, -p / q), axis=1), blocks)


def table_for_model(model: FilterModel) -> CoefficientTable:
    """Closed form when ``model`` has independent blocks, general solve otherwise."""
    if model.independent:
        return coeffs_closed_form(1.0 - model.keep_prob, blocks=model.blocks)
    return coeffs_general(model)


def restricted_marginals(model: FilterModel, subset: int) -> np.ndarray:
    """c[K] = P[f restricted to ``subset`` is on exactly on K], for every bitmask K."""
    P = model.block_probabilities()
    S = np.arange(P.size)
    return np.bincount(S & subset, weights=P, minlength=P.size)


def coeffs_general(models, r: int | None = None) -> CoefficientTable:
    """Coefficients for arbitrary enumerable per-subset filter laws.

    ``models`` is one :class:`FilterModel` (used for every subset) or a mapping
    from subset bitmask to model. With c_V[K] the probability that ``f^V``
    restricted to V is on exactly on K, the identity holds for every network
    iff sum_{V >= K} a_V c_V[K] = [K is the full set] for all K. The system is
    triangular in the subset order and is solved from the full set downwards,
    which is the cardinality induction run in closed form. Cost is
    O(4^r) time and memory, so r is capped at 12.
    """
    base = models if isinstance(models, FilterModel) else next(iter(models.values()))
    r = base.r if r is None else r
    if r > MAX_TABLE_BLOCKS:
        raise UnsupportedModelError(f"{r} blocks exceeds the limit of {MAX_TABLE_BLOCKS}")
    size = 1 << r
    C = np.empty((size, size))
    for V in range(size):
        m = model_for(models, V)
        if m.r != r or m.blocks != base.blocks:
            raise ShapeError(f"model for subset {V} has a different block structure")
        if m.prob_all_on() <= 0.0:
            raise PreconditionError(f"P[f = (1,...,1)] = 0 for subset {V}")
        C[V] = restricted_marginals(m, V)
    # C[V, K] vanishes unless K is a subset of V, hence unless K <= V.
    rhs = np.zeros(size)
    rhs[-1] = 1.0
    a = solve_triangular(C, rhs, trans="T", lower=True, check_finite=True)
    return CoefficientTable(r, a, base.blocks)


def _term_values(net: Network, model: FilterModel, subset: int, X, cache):
    """E[Psi(x, (w * 1_V) * f^V)] on ``X`` by enumerating the filter outcomes."""
    P = model.block_probabilities()
    ind = np.zeros(net.n_params)
    for s in range(model.r):
        if subset >> s & 1:
            ind[list(model.blocks[s])] = 1.0
    bits = subset_bits(model.r)
    total = 0.0
    support = np.flatnonzero(P)
    masks = model.expand(bits[support]) * ind
    missing = [m for m in masks if m.tobytes() not in cache]
    if missing:
        uniq = np.unique(np.array(missing), axis=0)
        vals = eval_masked_batch(net, uniq, X)
        for m, v in zip(uniq, vals):
            cache[m.tobytes()] = v
    for S, m in zip(support, masks):
        total = total + P[S] * cache[m.tobytes()]
    return total


def decomposition_values(net: Network, table: CoefficientTable, models, X) -> np.ndarray:
    """sum_V a_V E[Psi(x, (w * 1_V) * f^V)] evaluated by exhaustive enumeration."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != net.input_dim and net.input_dim == 1:
        X = X.reshape(-1, 1)
    cache = {}
    out = np.zeros((X.shape[0], net.output_dim))
    for V in range(1 << table.r):
        m = model_for(models, V)
        if m.n != net.n_params:
            raise ShapeError(f"model covers {m.n} parameters, network has {net.n_params}")
        if m.r > MAX_TABLE_BLOCKS:
            raise UnsupportedModelError(f"{m.r} blocks is too many to enumerate")
        out += table.entries[V] * _term_values(net, m, V, X, cache)
    return out


def verify_decomposition(net: Network, table: CoefficientTable, models, x_grid) -> float:
    """Largest |sum_V a_V E[...](x) - Psi(x, w)| over the grid and outputs."""
    X = np.atleast_2d(np.asarray(x_grid, dtype=float))
    if X.shape[1] != net.input_dim and net.input_dim == 1:
        X = X.reshape(-1, 1)
    lhs = decomposition_values(net, table, models, X)
    return float(np.max(np.abs(lhs - net(X))))


def mu_values(q) -> np.ndarray:
    """mu_K for every bitmask K by direct summation over supersets S of K.

    mu_K = sum_{S >= K} P[S] prod_{i in K} 1/q_i prod_{i in S \\ K} (1 - 1/q_i),
    with P[S] the product-Bernoulli(q) probability of S.
    """
    q = np.asarray(q, dtype=float).reshape(-1)
    if np.any(~(q > 0.0)) or np.any(q > 1.0):
        raise InvalidProbabilityError("keep probabilities must lie in (0, 1]")
    r = q.size
    if r > 10:
        raise UnsupportedModelError("direct summation limited to 10 blocks")
    mu = np.zeros(1 << r)
    for K in range(1 << r):
        acc = 0.0
        for S in range(1 << r):
            if S & K != K:
                continue
            term = 1.0
            for i in range(r):
                on = S >> i & 1
                term *= q[i] if on else 1.0 - q[i]
                if K >> i & 1:
                    term /= q[i]
                elif on:
                    term *= 1.0 - 1.0 / q[i]
            acc += term
        mu[K] = acc
    return mu


def mu_identity_check(q) -> float:
    """max_K |mu_K - [K is the full set]|."""
    mu = mu_values(q)
    target = np.zeros_like(mu)
    target[-1] = 1.0
    return float(np.max(np.abs(mu - target)))
