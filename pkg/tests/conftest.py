import time

import numpy as np
import pytest

from opfdd.network import Branch, Bus, Generator, Network, load_case, parse_matpower

# Three buses in a triangle, generators at buses 1 and 2, load at bus 3.
CASE3 = """function mpc = case3
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1   3   0    0   0  0  1  1  0  230  1  1.1  0.9;
    2   2   0    0   0  0  1  1  0  230  1  1.1  0.9;
    3   1   90   30  0  0  1  1  0  230  1  1.1  0.9;
];
mpc.gen = [
    1   0  0  300  -300  1  100  1  250  10;
    2   0  0  300  -300  1  100  1  300  10;
];
mpc.branch = [
    1  2  0.01  0.085  0.176  250  250  250  0  0  1  -360  360;
    1  3  0.017 0.092  0.158  250  250  250  0  0  1  -360  360;
    2  3  0.039 0.17   0.358  150  150  150  0  0  1  -360  360;
];
mpc.gencost = [
    2  0  0  3  0.11  5  150;
    2  0  0  3  0.085 1.2 600;
];
"""


@pytest.fixture
def case3_text():
    return CASE3


@pytest.fixture
def case3():
    return parse_matpower(CASE3, name="case3")


@pytest.fixture(scope="session")
def case9():
    return load_case("case9")


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


def two_bus(r=0.01, x=0.1, b_ch=0.02, p_d=0.5, q_d=0.2, s_max=None):
    """One generator at bus 1 feeding a load at bus 2 over one line."""
    buses = (Bus(1, 0.9, 1.1), Bus(2, 0.9, 1.1, p_d=p_d, q_d=q_d))
    gens = (Generator(1, 1, 0.0, 2.0, -2.0, 2.0, c2=10.0, c1=20.0, c0=5.0),)
    branches = (Branch(1, 2, r, x, b_ch, s_max=s_max, angle_min=-1.0, angle_max=1.0),)
    return Network(100.0, buses, gens, branches, ref_bus=1, name="two_bus")


@pytest.fixture
def net2():
    return two_bus()


def component_state_from(net, s):
    """Copy a centralized FlowState into every duplicated slot."""
    from opfdd.decomposition import ComponentState
    f, t = net.f_idx, net.t_idx
    line = np.column_stack([s.p_f, s.q_f, s.p_t, s.q_t, s.v[f], s.theta[f], s.v[t], s.theta[t]])
    return ComponentState(np.column_stack([s.p_g, s.q_g]), line, np.column_stack([s.v, s.theta]))


@pytest.fixture(scope="session")
def case9_central(case9):
    from opfdd.formulation import flat_start, solve_centralized
    return solve_centralized(case9, flat_start(case9))


@pytest.fixture(scope="session")
def case9_run(case9, case9_central):
    """Variant A3 under setting B on case9; shared by several test modules."""
    from opfdd.coordinator import lookup_setting, run, with_variant
    t0 = time.perf_counter()
    report, trace = run(case9, with_variant(lookup_setting("B"), "A3"), max_iter=20000,
                        p_ipm=case9_central[1])
    report.seconds = time.perf_counter() - t0
    return report, trace


# One line per acceptance criterion, echoed at the end of the run.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
