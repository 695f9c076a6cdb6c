"""
Duality gaps on two small nonconvex problems
============================================

Both problems split into an ``x1`` part and an ``x2`` part joined by the
coupling ``x1 = x2``. Relaxing the coupling with a multiplier gives a dual
function that is concave even though the problems are not convex.
"""

import numpy as np

from opfdd.toylab import (PROBLEM_A, PROBLEM_B, dual_curve, dual_exact, maximize_dual,
                          toy_admm, toy_proximal)

# Problem A has two feasible points, x = -c and x = +c with c = sqrt(ln 2 / 2).
# The global optimum sits at -c, a worse local optimum at +c.
print(f"problem A: global optimum {PROBLEM_A.p_star:.4f}, local optimum {PROBLEM_A.p_dagger:.4f}")

# The classical dual peaks below the optimum, on a kink where the Lagrangian
# has two minimisers. The subgradients there have opposite signs.
lam, value = maximize_dual(PROBLEM_A)
d = dual_exact(PROBLEM_A, lam)
print(f"classical dual: max {value:.4f} at lambda {lam:.4f}, gap {PROBLEM_A.p_star - value:.4f}")
print("  minimisers at the kink:", [(round(x1, 4), round(x2, 4)) for x1, x2 in d.argmins])

# A coarse look at the curve: concave, flat-topped near the kink.
lams = np.linspace(-1.0, 1.0, 9)
for l_, v in zip(lams, dual_curve(PROBLEM_A, lams)):
    print(f"  D({l_:+.2f}) = {v:.4f}")

# Adding the quadratic penalty rho/2 (x1 - x2)^2 closes the gap.
for rho in (2.0, 10.0, 50.0):
    _, v = maximize_dual(PROBLEM_A, "augmented", rho)
    print(f"augmented dual, rho = {rho:>4}: max {v:.4f}")

# ADMM finds whichever optimum lies in the basin of its starting point.
for start in (-1.0, 1.0):
    r = toy_admm(PROBLEM_A, 50.0, start)
    print(f"ADMM rho=50 from x2={start:+.0f}: {r.value:.4f} in {r.iterations} iterations")

# Proximal regularisation reaches the same points, only more slowly.
for start in (-1.0, 1.0):
    r = toy_proximal(PROBLEM_A, 50.0, (start, start))
    print(f"proximal nu=50 from {start:+.0f}: {r.value:.4f} in {r.iterations} iterations")

# Problem B has an unbounded classical dual; only the augmented form is useful.
print("\nproblem B: classical dual at 0 =", dual_exact(PROBLEM_B, 0.0).value)

# A small penalty converges to the optimum -5.25 from both starts. A larger
# one is start-dependent and slower.
for rho in (2.0, 10.0, 50.0):
    runs = [toy_admm(PROBLEM_B, rho, s) for s in (-1.0, 1.0)]
    print(f"ADMM rho={rho:>4}: " + ", ".join(
        f"start {s:+.0f} -> {r.value:.4f} ({r.iterations} its)" for s, r in zip((-1, 1), runs)))
