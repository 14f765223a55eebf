"""Dropout-trees, input copies, radii and level-by-level evaluation.

A tree is stored as flat arrays over vertices. Vertex 0 is the root at level
L (the base network depth); every other vertex ``v`` has a parent one level up
and owns the edge ``v -> parent[v]``. That edge carries a filter law
(``laws[law[v]]``, a :class:`FilterModel` over the row-major entries of
``W^(level(parent))``) and draws its filter as draw ``v`` of a per-level stream,
so the vertex id doubles as the edge's stream id.

Evaluation at a vertex ``v`` that is not a leaf:

    Phi^v = sigma_v( mean over children u of (V^e * F^e) Phi^u + b^v ),

with ``V^e = W^e / E[F^e]``. Leaves pass their input through unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import InvalidProbabilityError, OverflowRadiusError, ShapeError, StructuralError
from .filters import FilterModel, matrix_dropconnect
from .network import Network, hs_norm
from .rng import RandomSource


# -- radii -------------------------------------------------------------------

@dataclass(frozen=True)
class RadiiTable:
    R: float
    Q: float
    beta: float
    values: tuple

    def __getitem__(self, j: int) -> float:
        return self.values[j]

    @property
    def R_L(self) -> float:
        return self.values[-1]

    def to_json(self) -> dict:
        return {"R": self.R, "Q": self.Q, "beta": self.beta, "radii": list(self.values)}


def _coordinate_sup(act, lo, hi, grid_points=10_000):
    """sup of |act| over each interval [lo_i, hi_i]."""
    if act.monotone:
        return np.maximum(np.abs(act(lo)), np.abs(act(hi)))
    t = np.linspace(0.0, 1.0, grid_points)
    pts = lo[:, None] + (hi - lo)[:, None] * t[None, :]
    h = (hi - lo) / (grid_points - 1)
    return np.max(np.abs(act(pts)), axis=1) + act.lipschitz * h / 2


def layer_sup(act, bias, rho: float) -> float:
    """Upper bound on sup_{|x| <= rho} |act(x + bias)| (Euclidean norms).

    Per-coordinate suprema give a valid bound; for ReLU and identity the
    bound ``rho + |positive part of bias|`` (``|bias|`` for identity) is also
    valid and the smaller one is returned. Exact in one dimension.
    """
    b = np.asarray(bias, dtype=float)
    per = float(np.sqrt(np.sum(_coordinate_sup(act, b - rho, b + rho) ** 2)))
    if act.kind == "relu":
        return min(per, rho + float(np.linalg.norm(np.maximum(b, 0.0))))
    if act.kind == "identity":
        return min(per, rho + float(np.linalg.norm(b)))
    return per


def radii(base: Network, R: float, Q: float = 5.0, beta: float = 0.5) -> RadiiTable:
    """R_0 = (Q/beta) R + 1 and R_j = sup over the ball of radius
    |W^(j)|_HS R_{j-1} / beta + 1 of |sigma_j(x + b^(j))|, plus 1."""
    if not Q > 1.0:
        raise ValueError("Q must exceed 1")
    if not 0.0 < beta < 1.0:
        raise InvalidProbabilityError("beta must lie in (0, 1)")
    if not R > 0.0:
        raise ValueError("R must be positive")
    vals = [Q / beta * R + 1.0]
    for layer in base.layers:
        rho = hs_norm(layer.weight) * vals[-1] / beta + 1.0
        vals.append(layer_sup(layer.activation, layer.bias, rho) + 1.0)
        if not np.isfinite(vals[-1]):
            raise OverflowRadiusError(f"radius R_{len(vals) - 1} is not finite")
    return RadiiTable(float(R), float(Q), float(beta), tuple(float(v) for v in vals))


# -- tree structure ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DropoutTree:
    base: Network
    level: np.ndarray
    parent: np.ndarray
    law: np.ndarray
    laws: tuple = ()
    beta: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        level = np.asarray(self.level, dtype=np.int64)
        parent = np.asarray(self.parent, dtype=np.int64)
        law = np.asarray(self.law, dtype=np.int64)
        if not (level.shape == parent.shape == law.shape) or level.size == 0:
            raise StructuralError("level, parent and law arrays must align")
        L = self.base.depth
        if level[0] != L or parent[0] != -1:
            raise StructuralError("vertex 0 must be the root at the top level")
        rest = np.arange(1, level.size)
        if np.any(parent[rest] < 0) or np.any(parent[rest] >= rest):
            raise StructuralError("parents must precede their children")
        if np.any(level[rest] != level[parent[rest]] - 1) or np.any(level < 1):
            raise StructuralError("children sit one level below their parent, leaves at level >= 1")
        for v in (level, parent, law):
            v.setflags(write=False)
        object.__setattr__(self, "level", level)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "law", law)
        object.__setattr__(self, "laws", tuple(self.laws))

    @property
    def L(self) -> int:
        return self.base.depth

    @property
    def n_vertices(self) -> int:
        return self.level.size

    @property
    def n_edges(self) -> int:
        return self.level.size - 1

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def n_children(self) -> np.ndarray:
        return self._get("nch", lambda: np.bincount(self.parent[1:], minlength=self.n_vertices))

    @property
    def leaves(self) -> np.ndarray:
        return self._get("leaves", lambda: np.flatnonzero(self.n_children == 0))

    @property
    def min_level(self) -> int:
        return int(self.level.min())

    @property
    def is_full(self) -> bool:
        return bool(np.all(self.level[self.leaves] == 1))

    def at_level(self, j: int) -> np.ndarray:
        return self._get(("lvl", j), lambda: np.flatnonzero(self.level == j))

    def position(self) -> np.ndarray:
        """Index of each vertex within its level."""
        def build():
            pos = np.empty(self.n_vertices, dtype=np.int64)
            for j in range(self.min_level, self.L + 1):
                ids = self.at_level(j)
                pos[ids] = np.arange(ids.size)
            return pos
        return self._get("pos", build)

    def aggregator(self, j: int):
        """Sparse (n_level_j, n_level_{j-1}) matrix averaging children into parents."""
        def build():
            kids = self.at_level(j - 1)
            rows = self.position()[self.parent[kids]]
            w = 1.0 / self.n_children[self.parent[kids]]
            shape = (self.at_level(j).size, kids.size)
            return sparse.csr_matrix((w, (rows, np.arange(kids.size))), shape=shape)
        return self._get(("agg", j), build)

    def sizes(self) -> dict:
        """Number of children per non-leaf vertex, keyed by level (uniform trees)."""
        out = {}
        for j in range(self.min_level + 1, self.L + 1):
            n = self.n_children[self.at_level(j)]
            n = n[n > 0]
            out[j] = sorted(set(n.tolist()))
        return out

    # -- serialization -------------------------------------------------
    def to_json(self) -> dict:
        return {
            "base": self.base.to_json(),
            "beta": self.beta,
            "laws": [m.to_json() for m in self.laws],
            "vertices": [{"id": int(v), "level": int(self.level[v]), "parent": int(self.parent[v])}
                         for v in range(self.n_vertices)],
            "edges": [{"source": int(v), "target": int(self.parent[v]), "law": int(self.law[v]), "stream": int(v)}
                      for v in range(1, self.n_vertices)],
        }

    @classmethod
    def from_json(cls, obj) -> "DropoutTree":
        verts = sorted(obj["vertices"], key=lambda d: d["id"])
        if [d["id"] for d in verts] != list(range(len(verts))):
            raise StructuralError("vertex ids must be 0..V-1")
        law = np.full(len(verts), -1)
        for e in obj["edges"]:
            if e["stream"] != e["source"]:
                raise StructuralError("edge stream ids must equal their source vertex id")
            law[e["source"]] = e["law"]
        return cls(
            Network.from_json(obj["base"]),
            [d["level"] for d in verts],
            [d["parent"] for d in verts],
            law,
            tuple(FilterModel.from_json(m) for m in obj["laws"]),
            float(obj.get("beta", 0.0)),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DropoutTree":
        return cls.from_json(json.loads(Path(path).read_text()))


def trivial_tree(base: Network, beta: float = 0.0) -> DropoutTree:
    return DropoutTree(base, [base.depth], [-1], [-1], (), beta)


def _check_law(tree: DropoutTree, j: int, law: FilterModel):
    W = tree.base.layers[j - 1].weight
    if law.n != W.size:
        raise ShapeError(f"law covers {law.n} entries, W^({j}) has {W.size}")
    if law.expectation().min() < tree.beta - 1e-15:
        raise InvalidProbabilityError(f"keep probability below the tree floor {tree.beta}")


def copy_leaves(tree: DropoutTree, leaves, law: FilterModel, N: int) -> DropoutTree:
    """Attach ``N`` children to each leaf in ``leaves`` (all at one level above 1).

    Every new edge carries ``law`` and its own stream; existing edges are kept.
    """
    leaves = np.unique(np.asarray(leaves, dtype=np.int64))
    if int(N) < 1:
        raise StructuralError("copy size must be positive")
    if leaves.size == 0:
        return tree
    if np.any(tree.n_children[leaves] > 0):
        raise StructuralError("input copies attach to leaves only")
    levels = tree.level[leaves]
    if np.any(levels <= 1):
        raise StructuralError("cannot copy inputs below level 1")
    if np.unique(levels).size != 1:
        raise StructuralError("batched copies need leaves at a single level")
    k = int(levels[0])
    _check_law(tree, k, law)
    laws = list(tree.laws)
    idx = next((i for i, m in enumerate(laws) if m is law), None)
    if idx is None:
        laws.append(law)
        idx = len(laws) - 1
    new_parent = np.repeat(leaves, int(N))
    return DropoutTree(
        tree.base,
        np.concatenate([tree.level, np.full(new_parent.size, k - 1)]),
        np.concatenate([tree.parent, new_parent]),
        np.concatenate([tree.law, np.full(new_parent.size, idx)]),
        tuple(laws),
        tree.beta,
    )


def input_copy(tree: DropoutTree, leaf: int, law: FilterModel, N: int) -> DropoutTree:
    """Attach ``N`` children to a single leaf at level > 1."""
    if not 0 <= int(leaf) < tree.n_vertices:
        raise StructuralError(f"no vertex {leaf}")
    return copy_leaves(tree, [int(leaf)], law, N)


def uniform_full_tree(base: Network, sizes: dict, laws: dict, beta: float = 0.0) -> DropoutTree:
    """Full tree where every vertex at level j gets ``sizes[j]`` children with law ``laws[j]``."""
    tree = trivial_tree(base, beta)
    for j in range(base.depth, 1, -1):
        tree = copy_leaves(tree, tree.at_level(j), laws[j], sizes[j])
    return tree


def dropconnect_laws(base: Network, p: float, beta: float | None = None) -> dict:
    """Entrywise i.i.d. laws with drop probability ``p`` for edges at levels 2..L."""
    floor = (1.0 - p) if beta is None else beta
    return {j: matrix_dropconnect(*base.layers[j - 1].weight.shape, p, floor=floor)
            for j in range(2, base.depth + 1)}


# -- evaluation --------------------------------------------------------------

def input_map(tree: DropoutTree, X) -> np.ndarray:
    """In(x) at every leaf: the base layers below the leaf applied to x.

    Returns (n_leaves, P, d) when all leaves share a level.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    levels = tree.level[tree.leaves]
    if np.unique(levels).size != 1:
        raise StructuralError("input_map needs all leaves at one level")
    h = X
    for layer in tree.base.layers[: int(levels[0])]:
        h = layer(h)
    return np.broadcast_to(h, (tree.leaves.size,) + h.shape)


def _edge_products(tree: DropoutTree, j: int, mode: str, rng: RandomSource | None):
    """(V^e * F^e) for every edge into level j, shape (E, d_j, d_{j-1})."""
    kids = tree.at_level(j - 1)
    W = tree.base.layers[j - 1].weight
    out = np.empty((kids.size,) + W.shape)
    lawidx = tree.law[kids]
    level_rng = None if rng is None else rng.child("level", j)
    for li in np.unique(lawidx):
        m = tree.laws[li]
        sel = np.flatnonzero(lawidx == li)
        EF = m.expectation().reshape(W.shape)
        V = W / EF
        if mode == "deterministic":
            out[sel] = V * EF
        else:
            F = m.sample_at(level_rng, kids[sel]).reshape((-1,) + W.shape)
            out[sel] = V[None] * F
    return out


def eval_phi(tree: DropoutTree, inputs, mode: str = "sampled", rng: RandomSource | None = None,
             return_levels: bool = False):
    """Root output for per-leaf inputs.

    ``inputs`` is an array (n_leaves, P, d) aligned with ``tree.leaves`` (all
    leaves at one level) or a mapping leaf id -> (P, d) array. ``mode`` is
    ``"sampled"`` (one filter draw per edge from ``rng``) or
    ``"deterministic"`` (every filter replaced by its expectation). Returns
    (P, d_L), plus the per-level vertex values if ``return_levels``.
    """
    if mode not in ("sampled", "deterministic"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "sampled" and rng is None and tree.n_edges > 0:
        raise ValueError("sampled mode needs a RandomSource")
    leaves = tree.leaves
    if isinstance(inputs, dict):
        missing = [int(l) for l in leaves if int(l) not in inputs]
        if missing:
            raise ShapeError(f"missing inputs for leaves {missing[:5]}")
        leaf_vals = {int(l): np.atleast_2d(np.asarray(inputs[int(l)], dtype=float)) for l in leaves}
    else:
        arr = np.asarray(inputs, dtype=float)
        if arr.ndim != 3 or arr.shape[0] != leaves.size:
            raise ShapeError(f"expected inputs of shape ({leaves.size}, P, d), got {arr.shape}")
        leaf_vals = None
    dims = tree.base.dims
    values = {}
    P = None
    for j in range(tree.min_level, tree.L + 1):
        ids = tree.at_level(j)
        is_leaf = tree.n_children[ids] == 0
        if j > tree.min_level:
            below = values[j - 1]
            P = below.shape[1]
            VF = _edge_products(tree, j, mode, rng)
            contrib = np.einsum("erc,epc->epr", VF, below)
            agg = tree.aggregator(j) @ contrib.reshape(contrib.shape[0], -1)
            layer = tree.base.layers[j - 1]
            cur = layer.activation(np.asarray(agg).reshape(ids.size, P, dims[j]) + layer.bias)
        else:
            cur = None
        if np.any(is_leaf):
            leaf_ids = ids[is_leaf]
            if leaf_vals is not None:
                stack = np.stack([leaf_vals[int(l)] for l in leaf_ids])
            else:
                stack = arr[np.searchsorted(leaves, leaf_ids)]
            if stack.shape[2] != dims[j]:
                raise ShapeError(f"leaf inputs at level {j} must have dimension {dims[j]}")
            if cur is None:
                cur = np.empty((ids.size,) + stack.shape[1:])
            cur[is_leaf] = stack
        values[j] = cur
    out = values[tree.L][0]
    return (out, values) if return_levels else out


# -- ApProp ------------------------------------------------------------------

def ball_points(d: int, R: float, n_grid: int = 64, n_random: int = 0, rng: RandomSource | None = None):
    """Points of the closed ball B(0, R): a grid (an interval when d = 1) plus random points."""
    if d == 1:
        pts = np.linspace(-R, R, n_grid)[:, None]
    else:
        side = max(2, int(round(n_grid ** (1.0 / d))))
        axes = np.meshgrid(*[np.linspace(-R, R, side)] * d, indexing="ij")
        pts = np.stack([a.ravel() for a in axes], axis=1)
        pts = pts[np.linalg.norm(pts, axis=1) <= R]
    if n_random and rng is not None:
        g = rng.generator(0)
        z = g.normal(size=(n_random, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        rad = R * g.random(n_random) ** (1.0 / d)
        pts = np.vstack([pts, z * rad[:, None]])
    return pts


def approp_threshold(eps: float, R_L: float, q: float) -> float:
    return (eps / (4.0 * R_L)) ** q


def wilson_zero_upper(n: int, confidence: float = 0.95) -> float:
    from .estimators import wilson
    return wilson(0, n, confidence)[1]


def samples_needed(threshold: float, confidence: float = 0.95) -> int:
    """Smallest n at which zero violations give a Wilson upper bound below ``threshold``."""
    from scipy.stats import norm
    z = norm.ppf(confidence)
    n = max(1, int(np.ceil(z * z * (1.0 / threshold - 1.0))) + 1)
    while wilson_zero_upper(n, confidence) >= threshold:
        n = int(n * 1.01) + 1
    return n


@dataclass(frozen=True)
class ApPropResult:
    status: str  # "pass", "fail" or "unattainable"
    violations: int
    n: int
    estimate: float
    upper: float
    threshold: float
    max_deviation: float

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_json(self) -> dict:
        return {
            "status": self.status, "violations": self.violations, "n": self.n,
            "estimate": self.estimate, "upper": self.upper, "threshold": self.threshold,
            "max_deviation": self.max_deviation,
        }


def _deterministic(tree: DropoutTree) -> bool:
    return all(tree.laws[i].deterministic for i in np.unique(tree.law[1:]))


def approp_deviation(tree, X, delta, n_perturb, rng, index, det_out=None):
    """sup over sampled x and perturbed inputs of |Phi(x~) - Phi_det(In(x))| for one filter draw."""
    base_in = input_map(tree, X)
    if det_out is None:
        det_out = eval_phi(tree, base_in, "deterministic")
    nl, P, d = base_in.shape
    pert = [base_in]
    if n_perturb and delta > 0:
        g = rng.child("perturb").generator(index)
        z = g.normal(size=(n_perturb, nl, P, d))
        z *= delta / np.linalg.norm(z, axis=3, keepdims=True)
        pert += [base_in + z[m] for m in range(n_perturb)]
    inputs = np.concatenate(pert, axis=1)
    out = eval_phi(tree, inputs, "sampled", rng.child("filters", index))
    diff = out.reshape(len(pert), P, -1) - det_out[None]
    return float(np.max(np.linalg.norm(diff, axis=2)))


def check_approp(
    tree: DropoutTree,
    radii_table: RadiiTable,
    delta: float,
    eps: float,
    q: float,
    n_filter_samples: int,
    n_x_samples: int = 64,
    n_perturb_samples: int = 4,
    rng: RandomSource | None = None,
    confidence: float = 0.95,
    stop_early: bool = True,
) -> ApPropResult:
    """Monte Carlo check of the approximation property.

    Estimates P[sup_x sup_{x~} |Phi(x~) - Phi_det(In(x))| > eps/2], x over a grid
    plus random points of B(0, R) and x~ over ``n_perturb_samples`` leafwise
    perturbations of norm delta (plus x~ = In(x)). Passes iff the Wilson upper
    bound is below (eps / (4 R_L))^q. Filter-free trees are evaluated exactly.

    With ``stop_early``, sampling stops once passing is impossible, and an
    ``"unattainable"`` result is returned without sampling when even zero
    violations in ``n_filter_samples`` draws cannot beat the threshold.
    """
    if min(delta, eps, q) <= 0 or q < 1 or n_filter_samples < 1:
        raise ValueError("delta, eps, n must be positive and q >= 1")
    from .estimators import wilson
    rng = rng if rng is not None else RandomSource(0)
    thr = approp_threshold(eps, radii_table.R_L, q)
    X = ball_points(tree.base.input_dim, radii_table.R, n_x_samples, 0)
    det_out = eval_phi(tree, input_map(tree, X), "deterministic")
    if tree.n_edges == 0 or _deterministic(tree):
        dev = approp_deviation(tree, X, delta, n_perturb_samples, rng, 0, det_out)
        k = int(dev > eps / 2)
        return ApPropResult("pass" if k == 0 else "fail", k, 1, float(k), float(k), thr, dev)
    n_max = int(n_filter_samples)
    if stop_early and wilson(0, n_max, confidence)[1] >= thr:
        return ApPropResult("unattainable", 0, 0, 0.0, 1.0, thr, float("nan"))
    k, n, worst = 0, 0, 0.0
    for i in range(n_max):
        dev = approp_deviation(tree, X, delta, n_perturb_samples, rng, i, det_out)
        worst = max(worst, dev)
        n += 1
        k += int(dev > eps / 2)
        if stop_early and k and wilson(k, n_max, confidence)[1] >= thr:
            break
    lo, hi = wilson(k, n, confidence)
    status = "pass" if hi < thr else "fail"
    return ApPropResult(status, k, n, k / n, hi, thr, worst)


# -- growth ------------------------------------------------------------------

@dataclass(eq=False)
class GrowResult:
    tree: DropoutTree
    deltas: dict
    sizes: dict
    checks: list


def grow_full_tree(
    base: Network,
    radii_table: RadiiTable,
    eps: float,
    q: float,
    laws: dict,
    rng: RandomSource,
    n_init: int = 1,
    n_cap: int = 1 << 12,
    delta0: float | None = None,
    n_filter_samples: int | None = None,
    sample_cap: int = 20_000,
    n_x_samples: int = 64,
    n_perturb_samples: int = 4,
    confidence: float = 0.95,
) -> GrowResult:
    """Grow a full tree, certifying the approximation property after every round.

    Starting from the trivial tree, each round copies every leaf (level k > 1)
    with a common size N, doubling N from ``n_init`` until :func:`check_approp`
    passes. The perturbation radius starts at ``delta0`` (default eps/4) and is
    halved each round. The number of filter draws per check defaults to the
    smallest count that can certify the threshold, capped at ``sample_cap``.
    """
    from .errors import BudgetExceededError

    if base.depth < 2:
        raise StructuralError("growing a tree needs a base network with at least two layers")
    tree = trivial_tree(base, radii_table.beta)
    delta = eps / 4 if delta0 is None else float(delta0)
    thr = approp_threshold(eps, radii_table.R_L, q)
    n_draws = samples_needed(thr, confidence) if n_filter_samples is None else int(n_filter_samples)
    n_draws = min(n_draws, int(sample_cap))
    first = check_approp(tree, radii_table, delta, eps, q, n_draws, n_x_samples, n_perturb_samples,
                         rng.child("check", base.depth), confidence)
    checks = [{"level": base.depth, "N": 0, "delta": delta, **first.to_json()}]
    if not first.passed:
        raise BudgetExceededError("trivial tree fails the approximation property", {"checks": checks})
    deltas, sizes = {base.depth: delta}, {}
    for k in range(base.depth, 1, -1):
        delta /= 2
        N = max(1, int(n_init))
        while True:
            cand = copy_leaves(tree, tree.at_level(k), laws[k], N)
            res = check_approp(cand, radii_table, delta, eps, q, n_draws, n_x_samples, n_perturb_samples,
                               rng.child("check", k, N), confidence)
            checks.append({"level": k, "N": N, "delta": delta, **res.to_json()})
            if res.passed:
                tree = cand
                break
            if res.status == "unattainable":
                raise BudgetExceededError(
                    f"threshold {thr:.3g} is below what {n_draws} filter draws can certify",
                    {"checks": checks, "threshold": thr, "samples_needed": samples_needed(thr, confidence),
                     "sample_cap": sample_cap, "partial_tree": tree},
                )
            N *= 2
            if N > n_cap:
                raise BudgetExceededError(
                    f"copy size exceeded the cap {n_cap} at level {k}",
                    {"checks": checks, "threshold": thr, "partial_tree": tree},
                )
        deltas[k - 1] = delta
        sizes[k] = N
    return GrowResult(tree, deltas, sizes, checks)
