"""
Zero dynamics and convergence rates
===================================

On the constraint set the feedback-linearized flow coincides with the
projected gradient flow ``x' = -P(x) grad f(x)``. Off the set the error
splits into a normal part decaying at the output gain ``k`` and a
tangential part decaying at the curvature of the restricted objective.
"""

import numpy as np

from lagflow import FlowSpec, IntegrateConfig, builtin, integrate
from lagflow.analysis import fit_feasibility_rate, fit_rate, zero_dynamics_compare

p = builtin("illustrative_2d")
for s in (-2.0, 0.0, 0.5):
    res = zero_dynamics_compare(p, p.chart.lift(s))
    print(f"start x1={s:+.1f}: max deviation {res.max_deviation:.2e} (tolerance {res.tolerance:.1e})")

###############################################################################
# On a quadratic with an affine constraint both rates are known: the
# reduced Hessian is 4 and the output decays at ``k``. The primal rate is
# the smaller of the two.

q = builtin("quadratic_affine", Q=np.diag([1.0, 4.0]))
cfg = IntegrateConfig(abs_tol=1e-12, converge_tol=1e-8)
for k in (0.5, 2.0, 10.0):
    tr = integrate(q, FlowSpec.fl(k), [3.0, 2.0], cfg=cfg)
    primal = fit_rate(tr, [1.0, 0.0]).rho_hat
    feas = fit_feasibility_rate(tr).rho_hat
    print(f"k={k:>4}: primal rate {primal:.4f}, feasibility rate {feas:.4f}, min(4, k) = {min(4.0, k)}")
