import numpy as np
import pytest
from hypothesis import strategies as st

from riphs.core import GasPistonParams, HeatExchangerParams, make_gas_piston, make_heat_exchanger

FIG4_PAIRS = {(0, 1): 1.0, (1, 2): 1.0, (2, 3): 1.0, (2, 4): 1.0}
FIG5A_PAIRS = {(0, 1): 0.1, (1, 2): 1.0, (2, 3): 0.1, (2, 4): 0.1}
FIG4_XTP = np.array([3.75, 5.57, 6.18, 5.37, 6.88])
FIG5A_XTP = np.array([4.94, 5.36, 5.4, 5.32, 5.74])
C_MAT = np.zeros((3, 5))
C_MAT[0, 0] = C_MAT[1, 3] = C_MAT[2, 4] = 1.0
Y_REF = np.array([1.0, 5.0, 10.0])


def lam_from_pairs(n, pairs):
    lam = np.zeros((n, n))
    for (i, j), v in pairs.items():
        lam[i, j] = lam[j, i] = v
    return lam


def network(pairs=FIG4_PAIRS, n=5, **kw):
    return make_heat_exchanger(HeatExchangerParams(lam_from_pairs(n, pairs), **kw))


def box(ub):
    lo = np.array([-ub, 0.0, 0.0, -ub, -ub])
    return lo, -lo


def direct_network_rhs(lam, x, u, t_ref=1.0):
    """Fourier conduction written out compartment by compartment."""
    T = t_ref * np.exp(x)
    out = np.array(u, dtype=float).copy()
    for i in range(len(x)):
        for j in range(len(x)):
            out[i] -= lam[i, j] * (T[i] - T[j]) / T[i]
    return out


@pytest.fixture
def fig4_model():
    return network(FIG4_PAIRS)


@pytest.fixture
def fig5a_model():
    return network(FIG5A_PAIRS)


@pytest.fixture
def two_compartment():
    return network({(0, 1): 1.0}, n=2)


@pytest.fixture
def gas_piston():
    return make_gas_piston(GasPistonParams())


@st.composite
def lam_matrices(draw, min_n=1, max_n=5):
    n = draw(st.integers(min_n, max_n))
    lam = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if draw(st.booleans()):
                lam[i, j] = lam[j, i] = draw(st.floats(0.05, 3.0))
    return lam


@st.composite
def gas_params(draw):
    pos = st.floats(0.5, 2.0)
    return GasPistonParams(
        n_mol=draw(pos), gas_constant=draw(pos), s_ref=draw(st.floats(-1.0, 1.0)), t_ref=draw(pos),
        p_ref=draw(pos), mass=draw(pos), g_acc=draw(pos), area=draw(pos), kappa=draw(pos), t0=draw(pos),
    )


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def record_criterion(number, title, passed, detail, elapsed, budget):
    ok = bool(passed) and elapsed <= budget
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail} ({elapsed:.1f} s, budget {budget:g} s)"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
