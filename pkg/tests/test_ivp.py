import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riphs.core import HeatExchangerParams, ModelSpec, eval_rhs, make_gas_piston, make_heat_exchanger
from riphs.errors import BlowUp, DomainViolation, InconsistentTrajectory, InvalidParams
from riphs.ivp import (
    ControlSignal,
    Trajectory,
    balance_report,
    dopri_step,
    integrate,
    read_trajectory_csv,
    write_trajectory_csv,
)
from riphs.ocp import OcpSpec, rollout
from riphs.verify import estimate_growth_constant

from conftest import C_MAT, Y_REF, box, gas_params, lam_matrices

LN2 = math.log(2.0)


def test_two_compartment_equilibrates(two_compartment):
    u = ControlSignal.zeros(200, 2, 0.1)
    traj = integrate(two_compartment, [LN2, 0.0], u, t_end=20.0, method="rk45", tol=1e-10)
    np.testing.assert_allclose(traj.states[-1], [math.log(1.5)] * 2, atol=1e-6)
    assert np.max(np.abs(traj.H - 3.0)) <= 1e-8


def test_zero_span_gives_single_sample(two_compartment):
    u = ControlSignal.zeros(5, 2, 0.1, t0=1.0)
    for method in ("euler", "rk4", "rk45"):
        traj = integrate(two_compartment, [0.1, 0.2], u, t_end=1.0, method=method)
        assert traj.times.tolist() == [1.0]
        np.testing.assert_array_equal(traj.states, [[0.1, 0.2]])
        assert traj.controls.shape == (0, 2)


def test_gas_piston_volume_stays_positive(gas_piston):
    rng = np.random.default_rng(4)
    u = ControlSignal(rng.uniform(-1, 1, (100, 1)), 0.1)
    traj = integrate(gas_piston, [0.0, 1.0, -0.1], u, method="rk45", tol=1e-9)
    assert np.all(traj.states[:, 1] > 0)


def test_domain_violation_after_halvings():
    # x' = -1 with guard x > 0 must fail once the boundary is reached
    model = ModelSpec(
        n=1, m=1, j0=lambda x: np.zeros((1, 1)), jk=np.zeros((0, 1, 1)),
        hamiltonian=lambda x: x[..., 0], hamiltonian_grad=lambda x: np.ones_like(x),
        entropy=lambda x: np.zeros(x.shape[:-1]), entropy_grad=lambda x: np.zeros_like(x),
        gamma=[], input_map=lambda x, hx: np.ones((1, 1)), t0=1.0, domain_guard=lambda x: x[..., 0] > 0,
    )
    u = ControlSignal.constant([-1.0], 10, 0.1)
    for method in ("euler", "rk4", "rk45"):
        with pytest.raises(DomainViolation):
            integrate(model, [0.5], u, method=method)


def test_blow_up_cap(two_compartment):
    u = ControlSignal.constant([50.0, 50.0], 10, 0.1)
    with pytest.raises(BlowUp):
        integrate(two_compartment, [0.0, 0.0], u, method="rk45", max_norm=5.0)


def test_control_signal_validation():
    with pytest.raises(InvalidParams):
        ControlSignal(np.zeros((3, 1)), 0.0)
    with pytest.raises(InvalidParams):
        ControlSignal(np.full((3, 1), 2.0), 0.1, lo=-1.0, hi=1.0)
    with pytest.raises(InvalidParams):
        integrate(network2(), [0, 0], ControlSignal.zeros(3, 2, 0.1), t_end=0.55)
    with pytest.raises(InvalidParams):
        integrate(network2(), [0, 0], ControlSignal.zeros(3, 2, 0.1), t_end=0.5)


def network2():
    return make_heat_exchanger(HeatExchangerParams(np.array([[0.0, 1.0], [1.0, 0.0]])))


def test_euler_matches_transcription_rollout(fig4_model):
    rng = np.random.default_rng(8)
    lo, hi = box(10.0)
    spec = OcpSpec(fig4_model, 5.0, 0.1, (1, 1, 1), C_MAT, Y_REF, lo, hi, rng.uniform(0, 2, 5))
    U = spec.project(rng.uniform(-10, 10, (spec.K, 5)))
    traj_ocp, _ = rollout(spec, U)
    traj_ivp = integrate(fig4_model, spec.x0, ControlSignal(U, 0.1), method="euler")
    np.testing.assert_array_equal(traj_ocp.states, traj_ivp.states)


def test_deterministic(fig4_model):
    rng = np.random.default_rng(9)
    u = ControlSignal(rng.uniform(-5, 5, (50, 5)), 0.1)
    a = integrate(fig4_model, np.zeros(5), u, method="rk45", tol=1e-9)
    b = integrate(fig4_model, np.zeros(5), u, method="rk45", tol=1e-9)
    np.testing.assert_array_equal(a.states, b.states)
    for k in a.quad:
        np.testing.assert_array_equal(a.quad[k], b.quad[k])


def _final(model, x0, u_const, T, h, method):
    K = int(round(T / h))
    return integrate(model, x0, ControlSignal.constant(u_const, K, h), method=method).states[-1]


def _order(e1, e2):
    return math.log2(np.max(np.abs(e1)) / np.max(np.abs(e2)))


def test_convergence_orders(two_compartment):
    x0, uc = np.array([LN2, 0.0]), np.array([0.3, -0.2])
    a, b, c = (_final(two_compartment, x0, uc, 1.0, h, "euler") for h in (0.1, 0.05, 0.025))
    assert abs(_order(a - b, b - c) - 1.0) <= 0.2

    def rk4_final(sub):
        u = ControlSignal.constant(uc, 5, 0.2)
        return integrate(two_compartment, x0, u, method="rk4", substeps=sub).states[-1]

    a, b, c = (rk4_final(s) for s in (2, 4, 8))
    assert abs(_order(a - b, b - c) - 4.0) <= 0.2

    def dp_final(h, embedded):
        rhs = lambda z, u: eval_rhs(two_compartment, z, u)  # noqa: E731
        z = x0.copy()
        for _ in range(int(round(1.0 / h))):
            z5, err = dopri_step(rhs, z, uc, h)
            z = z5 - err if embedded else z5
        return z

    hs = (0.05, 0.025, 0.0125)
    a, b, c = (dp_final(h, True) for h in hs)
    assert abs(_order(a - b, b - c) - 4.0) <= 0.2
    # the propagated solution's leading error constant is nearly zero by
    # design, so at resolvable step sizes it converges faster than h^5
    a, b, c = (dp_final(h, False) for h in hs)
    assert _order(a - b, b - c) >= 5.0 - 0.2


# ---------------------------------------------------------------- balance audits


def test_balances_without_input(fig4_model):
    rng = np.random.default_rng(2)
    traj = integrate(fig4_model, rng.uniform(-1, 2, 5), ControlSignal.zeros(100, 5, 0.1), tol=1e-9)
    rep = balance_report(fig4_model, traj)
    assert rep.power_residual <= 10 * 1e-9 * (1 + np.abs(traj.H).max())
    assert rep.entropy_slack >= -1e-10
    assert rep.exergy_bound_margin is None


def test_trapezoid_fallback_close_to_integrated(fig4_model):
    rng = np.random.default_rng(3)
    u = ControlSignal(rng.uniform(-1, 1, (200, 5)), 0.05)
    traj = integrate(fig4_model, np.zeros(5), u, tol=1e-10)
    exact = balance_report(fig4_model, traj)
    trap = balance_report(fig4_model, traj, quadrature="trapezoid")
    assert exact.quadrature == "integrated" and trap.quadrature == "trapezoid"
    assert exact.power_residual <= 1e-7 * (1 + np.abs(traj.H).max())
    assert trap.power_residual <= 1e-2 * (1 + np.abs(traj.H).max())


def test_exergy_bound_with_estimated_constant(fig4_model):
    est = estimate_growth_constant(fig4_model, 1.0, (1, 2, 5, 10, 20), 200, seed=1)
    rng = np.random.default_rng(6)
    for _ in range(5):
        u = ControlSignal(rng.uniform(-10, 10, (20, 5)), 0.1)
        traj = integrate(fig4_model, rng.uniform(-1, 1, 5), u, tol=1e-9)
        rep = balance_report(fig4_model, traj, est.c_hat, est.shift)
        assert rep.exergy_bound_margin >= 0


def test_inconsistent_trajectory(fig4_model, two_compartment):
    traj = integrate(fig4_model, np.zeros(5), ControlSignal.zeros(3, 5, 0.1))
    with pytest.raises(InconsistentTrajectory):
        balance_report(two_compartment, traj)
    forged = Trajectory(traj.times, traj.states, traj.controls, traj.H + 1.0, traj.S, traj.E)
    with pytest.raises(InconsistentTrajectory):
        balance_report(fig4_model, forged)
    with pytest.raises(InconsistentTrajectory):
        Trajectory(np.array([0.0, 0.0]), np.zeros((2, 5)), np.zeros((1, 5)), np.zeros(2), np.zeros(2), np.zeros(2))


@settings(max_examples=15, deadline=None)
@given(lam_matrices(min_n=2, max_n=4), st.integers(0, 2**32 - 1))
def test_network_balances_property(lam, seed):
    model = make_heat_exchanger(HeatExchangerParams(lam))
    rng = np.random.default_rng(seed)
    u = ControlSignal(rng.uniform(-2, 2, (20, model.m)), 0.5)
    traj = integrate(model, rng.uniform(-1, 1, model.n), u, tol=1e-10)
    rep = balance_report(model, traj)
    assert rep.power_residual <= 1e-7 * (1 + np.abs(traj.H).max())
    assert rep.entropy_slack >= -1e-9


@settings(max_examples=15, deadline=None)
@given(gas_params(), st.integers(0, 2**32 - 1))
def test_gas_piston_balances_property(prm, seed):
    model = make_gas_piston(prm)
    rng = np.random.default_rng(seed)
    u = ControlSignal(rng.uniform(-0.5, 0.5, (20, 1)), 0.5)
    traj = integrate(model, [rng.uniform(-0.5, 0.5), rng.uniform(0.5, 2.0), rng.uniform(-0.5, 0.5)], u, tol=1e-10)
    rep = balance_report(model, traj)
    assert np.all(traj.states[:, 1] > 0)
    assert rep.power_residual <= 1e-7 * (1 + np.abs(traj.H).max())
    assert rep.entropy_slack >= -1e-9


# ---------------------------------------------------------------- CSV


def test_csv_round_trip(tmp_path, fig4_model):
    rng = np.random.default_rng(7)
    traj = integrate(fig4_model, rng.normal(size=5), ControlSignal(rng.normal(size=(10, 5)), 0.1))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x_1,x_2,x_3,x_4,x_5,u_1,u_2,u_3,u_4,u_5,H,S,E"
    assert lines[-1].split(",")[6:11] == ["nan"] * 5
    back = read_trajectory_csv(path, 5, 5)
    np.testing.assert_array_equal(back["x"], traj.states)
    np.testing.assert_array_equal(back["u"], traj.controls)
    np.testing.assert_array_equal(back["t"], traj.times)
    np.testing.assert_array_equal(back["E"], traj.E)
    with pytest.raises(InconsistentTrajectory):
        read_trajectory_csv(path, 4, 5)
