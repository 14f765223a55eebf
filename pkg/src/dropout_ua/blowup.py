"""M-fold averaged, coefficient-weighted filtered copies of a base network.

The blow-up output is

    (1/M) sum_{i=1}^M sum_V a_V Psi(x, (w * 1_V) * f^{i,V}).

Filters are constant on blocks, so ``(w * 1_V) * f`` only depends on the set
K = V & S of blocks that are both selected and on (S the block outcome of f).
Every copy therefore reuses one of the 2^r masked outputs Psi(x, w * 1_K);
sampling reduces to accumulating a weight per K. The M-fold parameter vector
is never materialised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientTable, restricted_marginals, table_for_model
from .errors import BaseFitFailedError, BudgetExceededError, ShapeError
from .estimators import ErrorReport, Seminorm, TargetFunction, grid_spec, seminorm_batch
from .filters import FilterModel, model_for, subset_bits
from .network import Network, eval_masked_batch
from .rng import RandomSource

DEFAULT_M_CAP = 1 << 16


@dataclass(frozen=True, eq=False)
class BlowupNetwork:
    base: Network
    table: CoefficientTable
    model: object  # FilterModel shared by every subset, or mapping subset -> FilterModel
    copies: int = 1

    def __post_init__(self):
        if int(self.copies) < 1:
            raise ValueError("need at least one copy")
        object.__setattr__(self, "copies", int(self.copies))
        ref = model_for(self.model, 0)
        if ref.r != self.table.r:
            raise ShapeError(f"table has {self.table.r} blocks, model {ref.r}")
        if ref.n != self.base.n_params:
            raise ShapeError(f"model covers {ref.n} parameters, network has {self.base.n_params}")
        if self.table.blocks is not None and self.table.blocks != ref.blocks:
            raise ShapeError("table and model block structures differ")

    @property
    def r(self) -> int:
        return self.table.r

    @property
    def blocks(self):
        return model_for(self.model, 0).blocks

    def with_copies(self, M: int) -> "BlowupNetwork":
        return BlowupNetwork(self.base, self.table, self.model, M)

    def subset_masks(self) -> np.ndarray:
        """Row K is the parameter indicator of block subset K, shape (2^r, n)."""
        ref = model_for(self.model, 0)
        return ref.expand(subset_bits(self.r))

    def subset_outputs(self, X) -> np.ndarray:
        """Psi(x, w * 1_K) for every K, shape (2^r, P, d_L)."""
        return eval_masked_batch(self.base, self.subset_masks(), _points(self.base, X))


def blowup(base: Network, model: FilterModel, copies: int = 1, table=None) -> BlowupNetwork:
    return BlowupNetwork(base, table if table is not None else table_for_model(model), model, copies)


def _points(net: Network, X):
    X = np.asarray(X, dtype=float)
    if X.ndim <= 1 and net.input_dim == 1 and X.size != 1:
        return X.reshape(-1, 1)
    return np.atleast_2d(X)


def _finish(bn: BlowupNetwork, X, out):
    X = np.asarray(X, dtype=float)
    return out[0] if X.ndim == 1 and X.size == bn.base.input_dim else out


def sample_weights(bn: BlowupNetwork, rng: RandomSource) -> np.ndarray:
    """Random weight on each Psi(., w * 1_K) for one realization, length 2^r.

    The filter of copy i for subset V is draw i of stream ``rng.child(V)``.
    """
    size = 1 << bn.r
    c = np.zeros(size)
    for V in range(size):
        a = bn.table.entries[V]
        if a == 0.0:
            continue
        S = model_for(bn.model, V).sample_masks(rng.child(V), bn.copies)
        c += np.bincount(S & V, minlength=size) * a
    return c / bn.copies


def mean_weights(bn: BlowupNetwork) -> np.ndarray:
    """Expected weights E[sample_weights] computed by enumeration."""
    size = 1 << bn.r
    c = np.zeros(size)
    for V in range(size):
        a = bn.table.entries[V]
        if a != 0.0:
            c += a * restricted_marginals(model_for(bn.model, V), V)
    return c


def _combine(weights, outputs):
    return np.tensordot(weights, outputs, axes=(weights.ndim - 1, 0))


def sample_eval(bn: BlowupNetwork, x, rng: RandomSource) -> np.ndarray:
    """One realization of the blow-up at ``x`` (a point or a (P, d) batch)."""
    return _finish(bn, x, _combine(sample_weights(bn, rng), bn.subset_outputs(x)))


def mean_eval(bn: BlowupNetwork, x) -> np.ndarray:
    """Exact expectation of :func:`sample_eval` (equals the base output)."""
    return _finish(bn, x, _combine(mean_weights(bn), bn.subset_outputs(x)))


def avg_filt_eval(bn: BlowupNetwork, x) -> np.ndarray:
    """Blow-up with every filter replaced by its expectation.

    All copies then coincide, so this is sum_V a_V Psi(x, w * 1_V * E[f^V]).
    """
    X = _points(bn.base, x)
    size = 1 << bn.r
    ind = bn.subset_masks()
    masks = np.stack([ind[V] * model_for(bn.model, V).expectation() for V in range(size)])
    out = _combine(bn.table.entries, eval_masked_batch(bn.base, masks, X))
    return _finish(bn, x, out)


def realization_errors(bn: BlowupNetwork, reference, seminorm: Seminorm, rng: RandomSource, runs: int):
    """Seminorm distance to ``reference`` (values on the grid) for ``runs`` realizations.

    Run ``k`` uses ``rng.child("run", k)``.
    """
    outs = bn.subset_outputs(seminorm.grid)
    W = np.stack([sample_weights(bn, rng.child("run", k)) for k in range(int(runs))])
    ref = np.asarray(reference, dtype=float).reshape(outs.shape[1:])
    return seminorm_batch(seminorm, _combine(W, outs), ref)


@dataclass(frozen=True, eq=False)
class ComposeResult:
    blowup: BlowupNetwork
    report: ErrorReport
    base_error: float
    history: list


def corollary_compose(
    target: TargetFunction,
    eps: float,
    model_for_base,
    rng: RandomSource,
    base: Network | None = None,
    fit=None,
    q: float = 2.0,
    runs: int = 100,
    grid_points: int = 512,
    m_start: int = 1,
    m_cap: int = DEFAULT_M_CAP,
    confidence: float = 0.95,
) -> ComposeResult:
    """Blow-up whose sup-grid error to ``target`` exceeds ``eps`` with probability < ``eps``.

    Uses ``base`` or fits one with ``fit(target)`` (returning a FitResult); the
    base must be within eps/2 of the target on the grid. ``model_for_base`` is a
    FilterModel or a callable building one from the base. M doubles from
    ``m_start`` until the Wilson upper bound on P[error > eps] and the L^q
    estimate are both below eps.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    X = target.grid(grid_points)
    y = target(X)
    if base is None:
        if fit is None:
            raise ValueError("need a base network or a fitter")
        base = fit(target).net
    base_error = float(np.max(np.abs(base(X) - y)))
    if not base_error < eps / 2:
        raise BaseFitFailedError(f"base network error {base_error:.4g} is not below eps/2 = {eps / 2:.4g}")
    model = model_for_base if isinstance(model_for_base, (FilterModel, dict)) else model_for_base(base)
    bn = blowup(base, model)
    sup = Seminorm.sup(X)
    history = []
    M = max(1, int(m_start))
    while M <= m_cap:
        bn = bn.with_copies(M)
        errs = realization_errors(bn, y, sup, rng.child("M", M), runs)
        report = ErrorReport.from_values(
            errs, eps, qs=(q,), confidence=confidence, seed=rng.seed,
            grid=grid_spec(target.lo, target.hi, grid_points),
            extra={"M": M, "base_error": base_error},
        )
        history.append({"M": M, "exceed_upper": report.exceed.upper, "lq": report.lq_estimate[float(q)]})
        if report.exceed.upper < eps and report.lq_estimate[float(q)] < eps:
            return ComposeResult(bn, report, base_error, history)
        M *= 2
    raise BudgetExceededError(f"M reached the cap {m_cap} without meeting eps={eps}", {"history": history})
