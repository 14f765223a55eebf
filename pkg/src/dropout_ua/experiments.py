"""Canonical networks, targets and end-to-end pipelines used by the CLI and demos."""

from __future__ import annotations

import numpy as np

from . import activations
from .blowup import BlowupNetwork, avg_filt_eval, blowup, realization_errors
from .errors import BudgetExceededError, PreconditionError, StructuralError
from .estimators import ErrorReport, Seminorm, TargetFunction, exceedance, grid_spec, lq_from_values, uniform_grid
from .filters import dropconnect_model, unit_mass
from .network import Network, network
from .precompose import Precomposition, nn_eval, precomposition, q_condition_check
from .rng import RandomSource
from .tree import (DropoutTree, GrowResult, dropconnect_laws, grow_full_tree, radii,
                   uniform_full_tree)


# -- canonical networks --------------------------------------------------------

def bump_target() -> TargetFunction:
    """sin(x + 3) exp(-|x + 3|) on [-10, 10]."""
    return TargetFunction(lambda X: np.sin(X[:, 0] + 3.0) * np.exp(-np.abs(X[:, 0] + 3.0)), [-10.0], [10.0], "bump")


def two_sigmoid_net() -> Network:
    """Two sigmoid units, sum_j c_j sigmoid(w_j x + b_j), fitted to :func:`bump_target`."""
    return network(
        ([[-1.4649536], [-2.64075988]], [-4.42999897, -7.9509289], "sigmoid"),
        ([[2.60963286, -2.59965028]], [0.0], "identity"),
    )


def kink_net(act="relu", c: float = 1.0) -> Network:
    """x -> c * act(x - 1): one hidden unit, identity output."""
    return network(([[1.0]], [-1.0], act), ([[c]], [0.0], "identity"))


def kink_target(act="relu") -> TargetFunction:
    a = activations.get(act)
    return TargetFunction(lambda X: a(X[:, 0] - 1.0), [0.0], [4.0], "kink")


def toy_relu_net() -> Network:
    """1 -> 3 -> 3 -> 1 ReLU network with moderate weights."""
    return network(
        ([[1.0], [-0.8], [0.6]], [0.1, 0.2, -0.1], "relu"),
        ([[0.5, -0.4, 0.3], [0.2, 0.6, -0.3], [-0.4, 0.3, 0.5]], [0.05, -0.1, 0.1], "relu"),
        ([[0.7, -0.6, 0.5]], [0.05], "identity"),
    )


def step_target() -> TargetFunction:
    return TargetFunction(lambda X: (X[:, 0] >= 0).astype(float), [-1.0], [1.0], "step")


def constant_target(value: float = 0.7, lo=0.0, hi=1.0) -> TargetFunction:
    return TargetFunction(lambda X: np.full(X.shape[0], value), [lo], [hi], "constant")


BUILTIN_NETWORKS = {
    "two_sigmoid": two_sigmoid_net,
    "kink": kink_net,
    "kink_identity": lambda: kink_net("identity"),
    "toy_relu": toy_relu_net,
}

BUILTIN_TARGETS = {
    "bump": bump_target,
    "kink": kink_target,
    "step": step_target,
    "constant": constant_target,
}


def network_target(net: Network, lo, hi, name="network") -> TargetFunction:
    return TargetFunction(lambda X: net(X), lo, hi, name)


# -- counterexample ------------------------------------------------------------

def counterexample(M: int = 4096, runs: int = 200, lo=0.0, hi=4.0, points: int = 512, act="relu",
                   band: float = 0.2, confidence: float = 0.95, rng: RandomSource | None = None) -> dict:
    """Random blow-up versus filter averaging for x -> act(x - 1), dropconnect p = 1/2 on both weights.

    With ReLU the averaged network is x -> 2 act(x/2 - 1), which is off by 1
    on [2, 4]; the random blow-up converges.
    """
    rng = rng if rng is not None else RandomSource(0)
    base = kink_net(act)
    model = dropconnect_model(base, 0.5)
    bn = blowup(base, model, M)
    X = uniform_grid([lo], [hi], points)
    y = base(X)
    avg = avg_filt_eval(bn, X)
    avg_err = np.abs(avg - y)[:, 0]
    sup_errs = realization_errors(bn, y, Seminorm.sup(X), rng.child("sup"), runs)
    l2_errs = realization_errors(bn, y, Seminorm.lr(X, 2.0), rng.child("sup"), runs)
    ex = exceedance(sup_errs, band, confidence)
    return {
        "activation": activations.get(act).to_json(),
        "M": M,
        "runs": runs,
        "grid": grid_spec([lo], [hi], points),
        "avg_filt_sup_error": float(avg_err.max()),
        "avg_filt_argmax_x": float(X[int(np.argmax(avg_err)), 0]),
        "blowup_sup_errors": sup_errs,
        "blowup_exceed": ex.to_json(),
        "blowup_l2_error": lq_from_values(l2_errs, 2.0),
        "X": X,
        "avg_values": avg[:, 0],
        "base_values": y[:, 0],
    }


# -- blow-up sweeps ------------------------------------------------------------

def blowup_runs(bn: BlowupNetwork, X, reference, rng: RandomSource, runs: int):
    """Per-run outputs on X, shape (runs, P); run k uses ``rng.child("run", k)``."""
    from .blowup import sample_weights
    outs = bn.subset_outputs(X)[:, :, 0]
    W = np.stack([sample_weights(bn, rng.child("run", k)) for k in range(int(runs))])
    return W @ outs


# -- dropout-tree pipeline -----------------------------------------------------

def _laws(base: Network, p: float, beta: float):
    if p == 0.0:
        return {j: unit_mass(base.layers[j - 1].weight.size) for j in range(2, base.depth + 1)}
    return dropconnect_laws(base, p, beta)


def default_beta(p: float) -> float:
    """Floor on keep probabilities: 1 - p, or 1/2 when nothing is dropped."""
    return 1.0 - p if p > 0.0 else 0.5


def end_to_end_errors(tree: DropoutTree, pre: Precomposition, X, y, rng: RandomSource, draws: int):
    """Sup-grid |NN(x) - Psi(x)| for ``draws`` independent realizations."""
    return np.array([
        float(np.max(np.abs(nn_eval(tree, pre, X, "sampled", rng.child("draw", k)) - y)))
        for k in range(int(draws))
    ])


def tune_alpha(tree, pre, X, y, alpha0=1e-2, min_alpha=1e-8):
    """Halve alpha from ``alpha0`` until the averaged-filter error improves by less than 10%."""
    err = float(np.max(np.abs(nn_eval(tree, pre.with_params(alpha=alpha0), X, "avg-filt") - y)))
    alpha = alpha0
    while alpha / 2 >= min_alpha:
        nxt = float(np.max(np.abs(nn_eval(tree, pre.with_params(alpha=alpha / 2), X, "avg-filt") - y)))
        if not nxt < 0.9 * err:
            break
        alpha, err = alpha / 2, nxt
    return alpha, err


def _e2e_ok(errs, eps, q, confidence):
    ex = exceedance(errs, eps, confidence)
    lq = lq_from_values(errs, q)
    return ex.upper < eps and lq < eps, ex, lq


def tree_pipeline(
    base: Network,
    eps: float = 0.2,
    p: float = 0.5,
    q: float = 2.0,
    Q: float = 5.0,
    R: float = 1.0,
    sigma0="relu",
    policy: str = "approp",
    rng: RandomSource | None = None,
    n_init: int = 1,
    n_cap: int = 1 << 12,
    sample_cap: int = 20_000,
    n_x_samples: int = 64,
    n_perturb_samples: int = 4,
    pre_n_init: int = 1,
    pre_n_cap: int = 1 << 12,
    draws: int = 500,
    grid_points: int = 128,
    alpha0: float = 1e-2,
    confidence: float = 0.95,
) -> dict:
    """Grow a full tree, tune the precomposition and check the three guarantees.

    ``policy="approp"`` grows the tree with certified approximation-property
    checks. ``policy="end_to_end"`` instead doubles one common copy size for
    every tree level and the precomposition until the end-to-end checks hold;
    it certifies nothing about intermediate levels.

    Checks on the grid over [-R, R]^d: (a) sup |NN_avg - Psi| < eps,
    (b) Wilson upper bound of P[sup |NN - Psi| > eps] < eps over ``draws``
    realizations, (c) L^q moment of the sup error < eps.
    """
    rng = rng if rng is not None else RandomSource(0)
    s0 = activations.get(sigma0)
    s0.check_zeroth_layer()
    if not q_condition_check(s0, Q):
        raise PreconditionError(f"4(|s-|+|s+|)/|s- + s+| < Q fails for {s0.kind} and Q={Q}")
    if base.depth < 2:
        raise StructuralError("the tree construction needs at least two layers")
    beta = default_beta(p)
    rt = radii(base, R, Q, beta)
    laws = _laws(base, p, beta)
    d = base.input_dim
    X = uniform_grid([-R] * d, [R] * d, grid_points)
    X = X[np.linalg.norm(X, axis=1) <= R + 1e-12]
    y = base(X)
    out = {"radii": rt.to_json(), "beta": beta, "policy": policy, "eps": eps, "q": q,
           "grid": grid_spec([-R] * d, [R] * d, grid_points), "draws": draws}

    def make_pre(N, alpha=alpha0):
        return precomposition(base, alpha, N, s0, p)

    if policy == "approp":
        grown: GrowResult = grow_full_tree(
            base, rt, eps, q, laws, rng.child("grow"), n_init=n_init, n_cap=n_cap,
            sample_cap=sample_cap, n_x_samples=n_x_samples, n_perturb_samples=n_perturb_samples,
            confidence=confidence,
        )
        tree = grown.tree
        out["approp_checks"] = grown.checks
        out["tree_sizes"] = {str(k): v for k, v in grown.sizes.items()}
        alpha, _ = tune_alpha(tree, make_pre(1), X, y, alpha0)
        N = max(1, int(pre_n_init))
        history = []
        while True:
            pre = make_pre(N, alpha)
            errs = end_to_end_errors(tree, pre, X, y, rng.child("e2e", N), draws)
            ok, ex, lq = _e2e_ok(errs, eps, q, confidence)
            history.append({"N": N, "exceed_upper": ex.upper, "lq": lq})
            if ok:
                break
            N *= 2
            if N > pre_n_cap:
                raise BudgetExceededError(f"precomposition size exceeded the cap {pre_n_cap}",
                                          {"history": history, "approp_checks": grown.checks})
    elif policy == "end_to_end":
        n = max(1, int(n_init))
        history = []
        while True:
            tree = uniform_full_tree(base, {j: n for j in range(2, base.depth + 1)}, laws, beta)
            alpha, _ = tune_alpha(tree, make_pre(n), X, y, alpha0)
            pre = make_pre(n, alpha)
            errs = end_to_end_errors(tree, pre, X, y, rng.child("e2e", n), draws)
            ok, ex, lq = _e2e_ok(errs, eps, q, confidence)
            history.append({"N": n, "exceed_upper": ex.upper, "lq": lq})
            if ok:
                break
            n *= 2
            if n > n_cap:
                raise BudgetExceededError(f"copy size exceeded the cap {n_cap}", {"history": history})
        out["tree_sizes"] = {str(j): n for j in range(2, base.depth + 1)}
    else:
        raise ValueError(f"unknown policy {policy!r}")

    avg_err = float(np.max(np.abs(nn_eval(tree, pre, X, "avg-filt") - y)))
    report = ErrorReport.from_values(errs, eps, qs=(q,), confidence=confidence, seed=rng.seed,
                                     grid=out["grid"], extra={"alpha": alpha, "N_pre": pre.N})
    out.update({
        "alpha": alpha,
        "N_pre": pre.N,
        "history": history,
        "avg_filt_sup_error": avg_err,
        "check_a": avg_err < eps,
        "check_b": report.exceed.upper < eps,
        "check_c": report.lq_estimate[float(q)] < eps,
        "report": report,
        "tree": tree,
        "pre": pre,
        "X": X,
        "y": y,
        "errors": errs,
    })
    return out


def radii_violations(tree: DropoutTree, pre: Precomposition, rt, rng: RandomSource, evaluations: int = 10_000,
                     points_per_draw: int = 64):
    """Count vertices with |Phi^v| >= R_level over sampled (x, filter draw) pairs.

    Points are uniform in B(0, R); each draw evaluates ``points_per_draw`` points.
    Returns (violations, evaluations done, largest ratio |Phi^v| / R_level).
    """
    d = tree.base.input_dim
    done, bad, worst, k = 0, 0, 0.0, 0
    while done < evaluations:
        g = rng.child("x").generator(k)
        m = min(points_per_draw, evaluations - done)
        z = g.normal(size=(m, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        X = z * (rt.R * g.random(m) ** (1.0 / d))[:, None]
        _, levels = nn_eval(tree, pre, X, "sampled", rng.child("draw", k), return_levels=True)
        for j, vals in levels.items():
            norms = np.linalg.norm(vals, axis=2)
            bad += int(np.count_nonzero(norms >= rt[j]))
            worst = max(worst, float(norms.max() / rt[j]))
        done += m
        k += 1
    return bad, done, worst
