"""Distributions of {0,1}-valued filter vectors.

A :class:`FilterModel` lives on ``n`` parameter positions grouped into blocks
``I_1..I_r``; all entries of a block share one filter value. The block-level
law is either independent Bernoulli (``keep_prob``) or an explicit table over
block outcomes. Block outcomes are encoded as bitmasks: bit ``s`` set means
block ``s`` is on.

Indices are 0-based throughout, including in the JSON format.
"""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidProbabilityError, ShapeError, UnsupportedModelError
from .network import Network
from .rng import RandomSource

MAX_ENUMERABLE_BLOCKS = 20
PMF_TOL = 1e-12


def subset_bits(r: int) -> np.ndarray:
    """Boolean matrix (2^r, r); row ``S`` holds the bits of bitmask ``S``."""
    return ((np.arange(1 << r)[:, None] >> np.arange(r)) & 1).astype(bool)


@dataclass(frozen=True, eq=False)
class FilterModel:
    n: int
    blocks: tuple
    keep_prob: np.ndarray | None = None
    block_pmf: np.ndarray | None = None
    floor: float | None = None

    def __post_init__(self):
        blocks = tuple(tuple(int(i) for i in b) for b in self.blocks)
        flat = sorted(i for b in blocks for i in b)
        if flat != list(range(self.n)) or any(len(b) == 0 for b in blocks):
            raise ShapeError("blocks must partition 0..n-1 into non-empty parts")
        object.__setattr__(self, "blocks", blocks)
        if (self.keep_prob is None) == (self.block_pmf is None):
            raise ValueError("give exactly one of keep_prob or block_pmf")
        if self.keep_prob is not None:
            q = np.array(self.keep_prob, dtype=float).reshape(-1)
            if q.shape != (len(blocks),):
                raise ShapeError(f"{len(blocks)} blocks but {q.size} keep probabilities")
            if np.any(~(q > 0.0)) or np.any(q > 1.0):
                raise InvalidProbabilityError("keep probabilities must lie in (0, 1] (drop probability < 1)")
            q.setflags(write=False)
            object.__setattr__(self, "keep_prob", q)
        else:
            if len(blocks) > MAX_ENUMERABLE_BLOCKS:
                raise UnsupportedModelError(f"explicit pmf limited to {MAX_ENUMERABLE_BLOCKS} blocks")
            p = np.array(self.block_pmf, dtype=float).reshape(-1)
            if p.shape != (1 << len(blocks),):
                raise ShapeError("block_pmf must have 2^r entries")
            if np.any(p < 0.0) or abs(p.sum() - 1.0) > PMF_TOL:
                raise InvalidProbabilityError(f"pmf must be nonnegative and sum to 1 (sum={p.sum()!r})")
            if p[-1] <= 0.0:
                raise InvalidProbabilityError("P[f = (1,...,1)] must be positive")
            p.setflags(write=False)
            object.__setattr__(self, "block_pmf", p)
        block_of = np.empty(self.n, dtype=np.intp)
        for s, b in enumerate(blocks):
            block_of[list(b)] = s
        block_of.setflags(write=False)
        object.__setattr__(self, "_block_of", block_of)
        if self.floor is not None and self.expectation().min() < self.floor - 1e-15:
            raise InvalidProbabilityError(
                f"keep probability {self.expectation().min()} below declared floor {self.floor}"
            )

    @property
    def r(self) -> int:
        return len(self.blocks)

    @property
    def independent(self) -> bool:
        return self.keep_prob is not None

    @property
    def block_of(self) -> np.ndarray:
        """Block index of every parameter position."""
        return self._block_of

    @property
    def deterministic(self) -> bool:
        if self.independent:
            return bool(np.all(self.keep_prob == 1.0))
        return bool(self.block_pmf[-1] == 1.0)

    def block_expectation(self) -> np.ndarray:
        if self.independent:
            return np.array(self.keep_prob)
        return subset_bits(self.r).T.astype(float) @ self.block_pmf

    def expectation(self) -> np.ndarray:
        """Entrywise keep probabilities E[f], length n."""
        return self.block_expectation()[self.block_of]

    def prob_all_on(self) -> float:
        if self.independent:
            return float(np.prod(self.keep_prob))
        return float(self.block_pmf[-1])

    def block_probabilities(self) -> np.ndarray:
        """P[block outcome = S] for every bitmask S (length 2^r)."""
        if self.r > MAX_ENUMERABLE_BLOCKS:
            raise UnsupportedModelError(f"{self.r} blocks is too many to enumerate")
        if not self.independent:
            return np.array(self.block_pmf)
        bits = subset_bits(self.r)
        q = self.keep_prob
        return np.prod(np.where(bits, q, 1.0 - q), axis=1)

    def block_outcome(self, outcome) -> int | None:
        """Bitmask of a full-length binary outcome, or None if not block-constant."""
        f = np.asarray(outcome).reshape(-1)
        if f.shape != (self.n,) or not np.all((f == 0) | (f == 1)):
            raise ShapeError(f"outcome must be a binary vector of length {self.n}")
        mask = 0
        for s, b in enumerate(self.blocks):
            vals = f[list(b)]
            if np.any(vals != vals[0]):
                return None
            mask |= int(vals[0]) << s
        return mask

    def pmf(self, outcome) -> float:
        S = self.block_outcome(outcome)
        if S is None:
            return 0.0
        if self.independent:
            bits = (S >> np.arange(self.r)) & 1
            q = self.keep_prob
            return float(np.prod(np.where(bits == 1, q, 1.0 - q)))
        return float(self.block_pmf[S])

    def expand(self, block_on) -> np.ndarray:
        """Map block-level booleans (..., r) to entry-level 0/1 floats (..., n)."""
        return np.asarray(block_on)[..., self.block_of].astype(float)

    @property
    def draw_width(self) -> int:
        """Uniforms consumed per draw."""
        return self.r if self.independent else 1

    def blocks_from_uniform(self, u) -> np.ndarray:
        """Block outcomes (count, r) from uniforms of shape (count, draw_width)."""
        u = np.asarray(u, dtype=float)
        if self.independent:
            return u < self.keep_prob
        cum = np.cumsum(self.block_pmf)
        idx = np.minimum(np.searchsorted(cum, u[:, 0] * cum[-1], side="right"), len(cum) - 1)
        return ((idx[:, None] >> np.arange(self.r)) & 1).astype(bool)

    def sample_blocks(self, rng: RandomSource, count: int, start: int = 0) -> np.ndarray:
        """Block outcomes for draws ``start..start+count-1`` as a bool array (count, r)."""
        return self.blocks_from_uniform(rng.uniform(count, self.draw_width, start))

    def sample_at(self, rng: RandomSource, indices) -> np.ndarray:
        """Entry-level 0/1 filters for arbitrary draw indices, shape (len(indices), n)."""
        return self.expand(self.blocks_from_uniform(rng.uniform_at(indices, self.draw_width)))

    def sample_masks(self, rng: RandomSource, count: int, start: int = 0) -> np.ndarray:
        """Bitmask form of :meth:`sample_blocks` (requires r < 63)."""
        on = self.sample_blocks(rng, count, start)
        return on.astype(np.int64) @ (np.int64(1) << np.arange(self.r, dtype=np.int64))

    # -- serialization -------------------------------------------------
    def to_json(self) -> dict:
        out = {"n": self.n, "blocks": [list(b) for b in self.blocks]}
        if self.independent:
            out["keep_prob"] = self.keep_prob.tolist()
        else:
            entries = []
            for S in np.flatnonzero(self.block_pmf):
                bits = (int(S) >> np.arange(self.r)) & 1
                entries.append({"outcome": self.expand(bits.astype(bool)).astype(int).tolist(),
                                "prob": float(self.block_pmf[S])})
            out["pmf"] = entries
        if self.floor is not None:
            out["floor"] = self.floor
        return out

    @classmethod
    def from_json(cls, obj) -> "FilterModel":
        n = int(obj["n"])
        floor = obj.get("floor")
        if "pmf" in obj:
            table = [(e["outcome"], e["prob"]) for e in obj["pmf"]]
            return from_pmf(n, table, blocks=obj.get("blocks"), floor=floor)
        return cls(n, obj["blocks"], keep_prob=obj["keep_prob"], floor=floor)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "FilterModel":
        return cls.from_json(json.loads(Path(path).read_text()))


# -- constructors ------------------------------------------------------------

def block_bernoulli(blocks, keep_prob, floor=None) -> FilterModel:
    blocks = [list(b) for b in blocks]
    n = sum(len(b) for b in blocks)
    return FilterModel(n, blocks, keep_prob=keep_prob, floor=floor)


def from_pmf(n: int, table, blocks=None, floor=None) -> FilterModel:
    """Model from an explicit table of ``(outcome, probability)`` pairs.

    ``blocks`` defaults to singletons (so ``n`` <= 20). Outcomes must be
    constant on every block.
    """
    if blocks is None:
        blocks = [[i] for i in range(n)]
    if len(blocks) > MAX_ENUMERABLE_BLOCKS:
        raise UnsupportedModelError(f"explicit pmf limited to {MAX_ENUMERABLE_BLOCKS} blocks")
    if isinstance(table, Mapping):
        table = list(table.items())
    probe = FilterModel(len(blocks), [[s] for s in range(len(blocks))],
                        keep_prob=np.ones(len(blocks)))
    pmf = np.zeros(1 << len(blocks))
    block_of = np.empty(n, dtype=np.intp)
    for s, b in enumerate(blocks):
        block_of[list(b)] = s
    for outcome, prob in table:
        f = np.asarray(outcome, dtype=int).reshape(-1)
        if f.shape != (n,):
            raise ShapeError(f"outcome {outcome!r} is not of length {n}")
        per_block = [f[list(b)] for b in blocks]
        if any(np.any(v != v[0]) for v in per_block):
            raise InvalidProbabilityError(f"outcome {outcome!r} is not constant on blocks")
        S = probe.block_outcome(np.array([v[0] for v in per_block]))
        pmf[S] += float(prob)
    return FilterModel(n, blocks, block_pmf=pmf, floor=floor)


def unit_mass(n: int, outcome=None, blocks=None) -> FilterModel:
    """Deterministic filters; defaults to all ones."""
    if outcome is None:
        outcome = np.ones(n, dtype=int)
    return from_pmf(n, [(outcome, 1.0)], blocks=blocks if blocks is not None else [list(range(n))])


def _check_drop(p):
    p = float(p)
    if not (0.0 <= p < 1.0):
        raise InvalidProbabilityError(f"drop probability {p} must lie in [0, 1)")
    return p


def _per_layer(net: Network, p) -> list[float]:
    if np.ndim(p) == 0:
        return [_check_drop(p)] * net.depth
    p = list(p)
    if len(p) != net.depth:
        raise ShapeError(f"need {net.depth} per-layer probabilities, got {len(p)}")
    return [_check_drop(x) for x in p]


def _assemble(n, random_blocks, keep, floor):
    """Random blocks first, then one always-on block collecting everything else."""
    covered = {i for b in random_blocks for i in b}
    always = [i for i in range(n) if i not in covered]
    blocks = list(random_blocks) + ([always] if always else [])
    q = list(keep) + ([1.0] if always else [])
    return FilterModel(n, blocks, keep_prob=q, floor=floor)


def node_dropout_model(net: Network, p_per_layer, floor=None) -> FilterModel:
    """Node dropout: one block per (layer, weight column); biases always on.

    ``p_per_layer[0] == 0`` means no dropout on the inputs. Weight blocks with
    drop probability 0 are merged into the always-on block.
    """
    ps = _per_layer(net, p_per_layer)
    blocks, keep = [], []
    for layer, (ws, _), p in zip(net.layers, net.param_slices(), ps):
        if p == 0.0:
            continue
        idx = np.arange(ws.start, ws.stop).reshape(layer.weight.shape)
        for c in range(layer.cols):
            blocks.append(idx[:, c].tolist())
            keep.append(1.0 - p)
    return _assemble(net.n_params, blocks, keep, floor)


def dropconnect_model(net: Network, p, floor=None) -> FilterModel:
    """Dropconnect: independent filter per weight entry; biases always on.

    ``p`` is a scalar or one drop probability per layer.
    """
    ps = _per_layer(net, p)
    blocks, keep = [], []
    for (ws, _), pj in zip(net.param_slices(), ps):
        if pj == 0.0:
            continue
        for i in range(ws.start, ws.stop):
            blocks.append([i])
            keep.append(1.0 - pj)
    return _assemble(net.n_params, blocks, keep, floor)


def matrix_dropconnect(rows: int, cols: int, p: float, floor=None) -> FilterModel:
    """Entrywise i.i.d. Bernoulli(1 - p) filters on a rows x cols matrix (row-major)."""
    p = _check_drop(p)
    n = rows * cols
    return FilterModel(n, [[i] for i in range(n)], keep_prob=np.full(n, 1.0 - p), floor=floor)


# -- module-level operations -------------------------------------------------

def sample(model: FilterModel, rng: RandomSource, index: int = 0) -> np.ndarray:
    """One binary filter vector (draw ``index`` of ``rng``)."""
    return model.expand(model.sample_blocks(rng, 1, index)[0]).astype(np.int8)


def expectation(model: FilterModel) -> np.ndarray:
    return model.expectation()


def pmf(model: FilterModel, outcome) -> float:
    return model.pmf(outcome)


def model_for(models, subset: int) -> FilterModel:
    """Filter law used for subset ``subset``: a shared model or a per-subset mapping."""
    if isinstance(models, FilterModel):
        return models
    return models[subset]
