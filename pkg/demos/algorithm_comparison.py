"""
Proximal only, consensus penalty, and both penalties on the 14-bus system
=========================================================================

The three variants differ in how strongly the duplicated quantities are
pulled together. A1 relies on the proximal term alone and is far slower.
A2 adds a penalty on the voltage and angle copies. A3 also penalises the
power mismatch. A1 is capped here to keep the demo short.
"""

import time

from opfdd.decomposition import AlgoParams
from opfdd.coordinator import run
from opfdd.formulation import flat_start, solve_centralized
from opfdd.network import load_case

net = load_case("case14")
_, cost = solve_centralized(net, flat_start(net))
print(f"{net.name}: centralized cost {cost:.2f}")

variants = {
    "A1": (AlgoParams(100000.0, 0.0, 0.0, 100.0, 10000.0, variant="A1"), 2000),
    "A2": (AlgoParams(1000.0, 0.0, 100000.0, 100.0, 100000.0, variant="A2"), 5000),
    "A3": (AlgoParams(1000.0, 1000.0, 100000.0, 100.0, 100000.0, variant="A3"), 5000),
}

for name, (params, cap) in variants.items():
    t0 = time.perf_counter()
    report, trace = run(net, params, max_iter=cap, p_ipm=cost)
    dt = time.perf_counter() - t0
    print(f"{name}: {report.status:>9} at k={report.iterations:>5}, "
          f"residual {report.residual_norm:.2e}, cost {report.p_amd:.2f}, {dt:.0f} s")
