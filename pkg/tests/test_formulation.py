import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import fsolve

from opfdd.formulation import (balance_residuals, branch_flows, flat_start, flow_jacobian,
                               flow_state, objective, solve_centralized)
from opfdd.network import Branch, Bus, Network, branch_coeffs, load_case


def _random_branches(rng, n):
    r = rng.uniform(0.0, 0.1, n)
    x = rng.uniform(0.02, 0.4, n)
    b = rng.uniform(0.0, 0.4, n)
    tap = rng.uniform(0.9, 1.1, n)
    shift = rng.uniform(-0.3, 0.3, n)
    brs = [Branch(1, 2, *args) for args in zip(r, x, b, tap, shift)]
    return brs, np.array([branch_coeffs(br).as_array() for br in brs])


def _oracle(br, vf, tf, vt, tt):
    """Pi-model injections from complex arithmetic."""
    y = 1 / complex(br.r, br.x)
    t = br.tap * np.exp(1j * br.shift)
    Vf, Vt = vf * np.exp(1j * tf), vt * np.exp(1j * tt)
    ytt = y + 0.5j * br.b_ch
    i_f = ytt / abs(t) ** 2 * Vf - y / np.conj(t) * Vt
    i_t = ytt * Vt - y / t * Vf
    return Vf * np.conj(i_f), Vt * np.conj(i_t)


def test_flows_match_complex_oracle_1000_draws():
    rng = np.random.default_rng(7)
    n = 1000
    brs, c = _random_branches(rng, n)
    vf, vt = rng.uniform(0.9, 1.1, (2, n))
    tf, tt = rng.uniform(-0.5, 0.5, (2, n))
    pf, qf, pt, qt = branch_flows(c, vf, tf, vt, tt)
    for k, br in enumerate(brs):
        sf, st_ = _oracle(br, vf[k], tf[k], vt[k], tt[k])
        assert abs(pf[k] - sf.real) < 1e-12 and abs(qf[k] - sf.imag) < 1e-12
        assert abs(pt[k] - st_.real) < 1e-12 and abs(qt[k] - st_.imag) < 1e-12


def test_specific_flow_point():
    br = Branch(1, 2, 0.01, 0.1)
    c = branch_coeffs(br)
    got = branch_flows(c, 1.05, 0.05, 1.0, 0.0)
    y = 1 / complex(0.01, 0.1)
    vf, vt = 1.05 * np.exp(0.05j), 1.0
    s = vf * np.conj(y * (vf - vt))
    assert got[0] == pytest.approx(s.real, abs=1e-12)
    assert got[1] == pytest.approx(s.imag, abs=1e-12)


def test_no_flow_at_equal_voltages():
    c = branch_coeffs(Branch(1, 2, 0.02, 0.2))
    assert np.allclose(branch_flows(c, 1.0, 0.3, 1.0, 0.3), 0.0, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.9, 1.1), st.floats(0.9, 1.1), st.floats(-0.5, 0.5), st.floats(0.05, 0.5))
def test_lossless_line_conserves_active_power(vf, vt, d, x):
    c = branch_coeffs(Branch(1, 2, 0.0, x))
    pf, _, pt, _ = branch_flows(c, vf, d, vt, 0.0)
    assert pf + pt == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.9, 1.1), st.floats(0.9, 1.1), st.floats(-0.5, 0.5),
       st.floats(0.001, 0.2), st.floats(0.01, 0.5))
def test_losses_nonnegative(vf, vt, d, r, x):
    c = branch_coeffs(Branch(1, 2, r, x))
    pf, _, pt, _ = branch_flows(c, vf, d, vt, 0.0)
    assert pf + pt >= -1e-12


def test_jacobian_matches_central_differences():
    rng = np.random.default_rng(3)
    brs, c = _random_branches(rng, 100)
    h = 1e-6
    for k in range(100):
        x = np.concatenate([rng.uniform(0.9, 1.1, 1), rng.uniform(-0.3, 0.3, 1),
                            rng.uniform(0.9, 1.1, 1), rng.uniform(-0.3, 0.3, 1)])
        J = flow_jacobian(c[k], *x)
        for col in range(4):
            e = np.zeros(4)
            e[col] = h
            fd = (np.array(branch_flows(c[k], *(x + e))) - np.array(branch_flows(c[k], *(x - e)))) / (2 * h)
            for row in range(4):
                a, b = J[row, col], fd[row]
                if abs(a) < 1e-8:
                    assert abs(a - b) < 1e-8
                else:
                    assert abs(a - b) / abs(a) < 1e-6


def test_jacobian_at_zero_angle():
    c = branch_coeffs(Branch(1, 2, 0.01, 0.1))
    J = flow_jacobian(c, 1.02, 0.1, 0.98, 0.1)
    assert J[0, 1] == pytest.approx(c.b_ff * 1.02 * 0.98)
    assert np.allclose(J[:, 1], -J[:, 3])


def test_balance_isolated_bus():
    net = Network(100.0, [Bus(1, 0.9, 1.1)], [], [])
    s = flow_state(net, [1.0], [0.0], [], [])
    assert np.allclose(balance_residuals(net, s), 0.0)


def test_balance_shunt_only():
    net = Network(100.0, [Bus(1, 0.9, 1.2, g_sh=0.1)], [], [])
    r_p, _ = balance_residuals(net, flow_state(net, [1.1], [0.0], [], []))
    assert r_p[0] == pytest.approx(-0.121)


def test_objective_constant_terms(case9):
    assert objective(case9, np.zeros(case9.n_gen)) == pytest.approx(
        sum(g.c0 for g in case9.generators))


@settings(max_examples=50, deadline=None)
@given(st.permutations(range(5)))
def test_objective_permutation_invariant(perm):
    net5 = load_case("case5")
    p = np.linspace(0.1, 1.5, 5)
    perm = list(perm)
    shuffled = Network(net5.base_mva, net5.buses, [net5.generators[k] for k in perm],
                       net5.branches, ref_bus=net5.ref_bus)
    assert objective(shuffled, p[perm]) == pytest.approx(objective(net5, p), rel=1e-14)


def test_centralized_case9_feasible(case9):
    state, cost = solve_centralized(case9, flat_start(case9))
    assert cost == pytest.approx(5296.69, rel=5e-3)
    r_p, r_q = balance_residuals(case9, state)
    assert max(abs(r_p).max(), abs(r_q).max()) < 1e-6
    vec = case9.vectors()
    assert np.all(state.v >= vec["v_min"] - 1e-8) and np.all(state.v <= vec["v_max"] + 1e-8)
    assert np.all(state.p_g >= vec["p_min"] - 1e-8) and np.all(state.p_g <= vec["p_max"] + 1e-8)
    assert state.theta[case9.ref_index] == 0.0


def _two_bus_oracle(net):
    """Scan v1 finely; for each, solve the load-bus balance for (v2, delta)."""
    c = net.coeffs[0]
    g = net.generators[0]
    p_d, q_d = net.buses[1].p_d, net.buses[1].q_d
    best = np.inf
    guess = np.array([1.0, -0.05])
    for v1 in np.arange(0.9, 1.1 + 1e-12, 2e-4):
        def bal(z, v1=v1):
            _, _, pt, qt = branch_flows(c, v1, 0.0, z[0], z[1])
            return [pt + p_d, qt + q_d]
        z, _, ok, _ = fsolve(bal, guess, full_output=True)
        if ok != 1 or not 0.9 <= z[0] <= 1.1:
            continue
        guess = z
        pf, qf, _, _ = branch_flows(c, v1, 0.0, z[0], z[1])
        if g.p_min <= pf <= g.p_max and g.q_min <= qf <= g.q_max:
            best = min(best, g.cost(pf))
    return best


def test_centralized_two_bus_matches_grid_oracle(net2):
    _, cost = solve_centralized(net2, flat_start(net2))
    expect = _two_bus_oracle(net2)
    assert cost == pytest.approx(expect, rel=5e-4)
