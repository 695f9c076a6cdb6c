"""Acceptance criteria, one test each; every test records a PASS/FAIL line."""
import time

import numpy as np
import pytest

import test_decomposition
import test_formulation
import test_toylab
from conftest import ACCEPTANCE
from opfdd.coordinator import run
from opfdd.decomposition import AlgoParams
from opfdd.formulation import balance_residuals, flat_start, solve_centralized
from opfdd.network import load_case
from opfdd.toylab import (PROBLEM_A, PROBLEM_B, dual_exact, maximize_dual, toy_admm,
                          toy_proximal)

CENTRAL = {"case5": 17551.89, "case9": 5296.69, "case14": 8081.52, "case30": 576.89}


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def within(count, ref, factor=3.0):
    return ref / factor <= count <= ref * factor


@pytest.fixture(scope="module")
def case14_runs(case14):
    """A2 and A3 runs on case14 with their wall times."""
    _, p_ipm = solve_centralized(case14, flat_start(case14))
    out = {"p_ipm": p_ipm}
    specs = {"A2": AlgoParams(1000.0, 0.0, 100000.0, 100.0, 100000.0, variant="A2"),
             "A3": AlgoParams(1000.0, 1000.0, 100000.0, 100.0, 100000.0, variant="A3")}
    for name, params in specs.items():
        t0 = time.perf_counter()
        report, _ = run(case14, params, max_iter=20000, p_ipm=p_ipm)
        out[name] = (report, time.perf_counter() - t0)
    return out


def test_criterion_1_dual_geometry():
    t0 = time.perf_counter()
    lam, value = maximize_dual(PROBLEM_A)
    mult = len(dual_exact(PROBLEM_A, lam).argmins)
    dt = time.perf_counter() - t0
    ok = abs(value - 1.7670) <= 1e-3 and abs(lam - 0.1203) <= 1e-3 and mult >= 2 and dt < 10
    record(1, ok, f"max D = {value:.5f} at lam = {lam:.5f}, argmins = {mult}, {dt:.1f} s")


def test_criterion_2_admm_basins():
    t0 = time.perf_counter()
    low = toy_admm(PROBLEM_A, 50.0, -1.0)
    high = toy_admm(PROBLEM_A, 50.0, 1.0)
    counts = [toy_admm(PROBLEM_A, rho, -1.0).iterations for rho in (2.0, 10.0, 50.0)]
    dt = time.perf_counter() - t0
    ok = (low.converged and abs(low.value - 1.8194) <= 1e-3
          and high.converged and abs(high.value - 1.9608) <= 1e-3
          and counts[0] > counts[1] > counts[2]
          and all(within(c, r) for c, r in zip(counts, (39, 14, 8))) and dt < 5)
    record(2, ok, f"start -1 -> {low.value:.5f}, start +1 -> {high.value:.5f}, "
                  f"iterations rho=2/10/50: {counts}, {dt:.1f} s")


def test_criterion_3_problem_b():
    runs = {(rho, s): toy_admm(PROBLEM_B, rho, s) for rho in (2.0, 10.0, 50.0) for s in (-1.0, 1.0)}
    val = {k: r.value for k, r in runs.items()}
    counts = [runs[(rho, 1.0)].iterations for rho in (2.0, 10.0, 50.0)]
    ok = (all(runs[(2.0, s)].converged and abs(val[(2.0, s)] + 5.25) <= 1e-3 for s in (-1, 1))
          and abs(val[(10.0, -1.0)] - 0.75) <= 1e-3 and abs(val[(10.0, 1.0)] + 5.25) <= 1e-3
          and counts[0] < counts[1] < counts[2]
          and all(within(c, r) for c, r in zip(counts, (19, 49, 120))))
    record(3, ok, f"rho=2 -> {val[(2.0, -1.0)]:.4f}/{val[(2.0, 1.0)]:.4f}, "
                  f"rho=10 -> {val[(10.0, -1.0)]:.4f}/{val[(10.0, 1.0)]:.4f} (starts -1/+1), "
                  f"iterations rho=2/10/50 from +1: {counts}")


def test_criterion_4_proximal_vs_admm():
    parts, ok = [], True
    for start, target in ((-1.0, PROBLEM_A.p_star), (1.0, PROBLEM_A.p_dagger)):
        prox = toy_proximal(PROBLEM_A, 50.0, (start, start))
        admm = toy_admm(PROBLEM_A, 50.0, start)
        ok &= (prox.converged and admm.converged and prox.iterations > admm.iterations
               and abs(prox.value - target) <= 1e-3 and abs(admm.value - target) <= 1e-3)
        parts.append(f"start {start:+.0f}: proximal {prox.iterations} vs ADMM {admm.iterations}")
    record(4, ok, "; ".join(parts))


@pytest.mark.parametrize("name", list(CENTRAL))
def test_criterion_5_centralized(name):
    net = load_case(name)
    t0 = time.perf_counter()
    _, cost = solve_centralized(net, flat_start(net))
    dt = time.perf_counter() - t0
    rel = abs(cost - CENTRAL[name]) / CENTRAL[name]
    record(5, rel <= 5e-3 and dt < 60,
           f"{name} cost {cost:.2f} vs {CENTRAL[name]} ({100 * rel:.3f} %), {dt:.1f} s")


def _criterion_6(label, report, seconds, ref):
    lo, hi = 0.3 * ref, 4 * ref
    ok = (report.converged and abs(report.ro_gap) < 0.05 and abs(report.amd_gap) < 0.01
          and lo <= report.iterations <= hi and seconds < 1800)
    record(6, ok, f"{label}: {report.status} in {report.iterations} iterations "
                  f"(band [{lo:.0f}, {hi:.0f}]), ROgap {report.ro_gap:.4f} %, "
                  f"AMDgap {report.amd_gap:.2e} %, {seconds:.0f} s")


def test_criterion_6_case9_setting_b(case9_run):
    report, _ = case9_run
    _criterion_6("case9/B", report, report.seconds, 630)


def test_criterion_6_case14_setting_c(case14_runs):
    report, seconds = case14_runs["A3"]
    _criterion_6("case14/C", report, seconds, 857)


def test_criterion_7_ranking(case14, case14_runs):
    a2, a3 = case14_runs["A2"][0], case14_runs["A3"][0]
    assert a2.converged, "A2 reference run did not converge"
    cap = min(10 * a2.iterations, 60000)
    a1, _ = run(case14, AlgoParams(100000.0, 0.0, 0.0, 100.0, 10000.0, variant="A1"),
                max_iter=cap, p_ipm=False)
    ok = a1.iterations >= 10 * a2.iterations and a3.iterations <= 1.2 * a2.iterations
    a1_txt = f"{a1.iterations}" + ("" if a1.converged else " (capped, not converged)")
    record(7, ok, f"A1 {a1_txt}, A2 {a2.iterations}, A3 {a3.iterations}; "
                  f"A1/A2 = {a1.iterations / a2.iterations:.1f}, A3/A2 = "
                  f"{a3.iterations / a2.iterations:.2f}")


def test_criterion_8_properties(case9, case9_central):
    checks = {
        "flow oracle": test_formulation.test_flows_match_complex_oracle_1000_draws,
        "jacobian": test_formulation.test_jacobian_matches_central_differences,
        "generator grid": test_decomposition.test_gen_closed_form_vs_grid,
        "bus grid": test_decomposition.test_bus_closed_form_vs_grid,
        "danskin": test_toylab.test_danskin_subgradient_inequality,
        "concavity": test_toylab.test_classical_dual_concave,
        "augmented concavity": test_toylab.test_augmented_dual_concave,
    }
    failed = []
    for name, check in checks.items():
        try:
            check()
        except AssertionError:
            failed.append(name)
    worst = 0.0
    for name in CENTRAL:
        net = case9 if name == "case9" else load_case(name)
        state = case9_central[0] if name == "case9" else solve_centralized(net, flat_start(net))[0]
        worst = max(worst, *(float(np.abs(r).max()) for r in balance_residuals(net, state)))
    if worst >= 1e-6:
        failed.append("balance residual")
    record(8, not failed, f"{len(checks) + 1 - len(failed)}/{len(checks) + 1} property checks "
                          f"hold; worst balance residual {worst:.1e}"
                          + (f"; failing: {', '.join(failed)}" if failed else ""))
