"""Blow-up error decays like M^(-1/2) on the two-sigmoid bump fit."""

from dropout_ua.blowup import blowup, realization_errors
from dropout_ua.estimators import Seminorm, loglog_slope, uniform_grid
from dropout_ua.experiments import two_sigmoid_net
from dropout_ua.filters import dropconnect_model
from dropout_ua.rng import RandomSource

base = two_sigmoid_net()
X = uniform_grid([-10.0], [10.0], 512)
y = base(X)
sup = Seminorm.sup(X)
Ms = [16, 64, 256, 1024, 4096]
for p in (0.5, [0.5, 0.0]):
    bn = blowup(base, dropconnect_model(base, p))
    means = []
    for M in Ms:
        errs = realization_errors(bn.with_copies(M), y, sup, RandomSource(1).child("M", M), 20)
        means.append(errs.mean())
        print(f"p={p!s:10s} M={M:5d} mean sup error {errs.mean():.4f}  max {errs.max():.4f}")
    print(f"p={p!s:10s} log-log slope {loglog_slope(Ms, means):.3f}\n")
