"""
A two-variable problem solved by hand and by ALPDSN
====================================================

The problem is

    min  1/2 (x1 - 1)^2 + |x2|   s.t.  x1 + x2 = 0

Substituting x2 = -x1 leaves 1/2 (x1 - 1)^2 + |x1|, whose subgradient
x1 - 1 + sign(x1) contains zero at x1 = 0. So the solution is (0, 0).
"""

# %%
# Build the problem: one smooth block, one L1 block, both entering the
# constraint through the identity.
import numpy as np

from alpdsn.alcore import ALState, tiny_problem
from alpdsn.newton import NewtonConfig, alpdsn

P = tiny_problem()
print("blocks:", P.x_shapes, "constraint rhs:", P.b)

# %%
# The residual map F vanishes exactly at the KKT point. The multiplier of the
# last block is +1 here, the value that makes 0 a minimizer of |x2| - z x2.
w_star = P.zero_point()
w_star.z[-1][:] = 1.0
print("|F| at the known solution:", ALState(P, w_star, 1.0).res_norm)

# %%
# Solve from zero. Each row of the trace is one accepted Newton step: the
# residual, the regularization tau and which acceptance rule fired.
rep = alpdsn(P, config=NewtonConfig(timing=False))
for row in rep.trace:
    print(f"k={row.k:2d}  |F|={row.res_norm:.3e}  tau={row.tau:.2e}  {row.rule}")

x = np.concatenate([b.ravel() for b in rep.state.primal_blocks()])
print("status:", rep.status, " x =", x)
