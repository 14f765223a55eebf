"""Grow a dropout tree for the toy ReLU net and check it end to end.

The certified per-node policy needs ~3e7 filter draws per check at eps = 0.2,
so this demo uses the end-to-end sizing policy and reports both outcomes.
"""

from dropout_ua.errors import BudgetExceededError
from dropout_ua.experiments import toy_relu_net, tree_pipeline
from dropout_ua.rng import RandomSource

net = toy_relu_net()
try:
    tree_pipeline(net, eps=0.2, p=0.5, policy="approp", rng=RandomSource(7))
except BudgetExceededError as e:
    print(f"approp policy: {e}")

res = tree_pipeline(net, eps=0.2, p=0.5, policy="end_to_end", n_init=8, rng=RandomSource(7), draws=500)
rep = res["report"]
print(f"radii {[round(r, 1) for r in res['radii']['radii']]}  tree sizes {res['tree_sizes']}  N_pre {res['N_pre']}")
print(f"(a) avg-filt sup error {res['avg_filt_sup_error']:.2e}")
print(f"(b) P[sup error > eps] <= {rep.exceed.upper:.3f}")
print(f"(c) L2 moment {rep.lq_estimate[2.0]:.3f}")
