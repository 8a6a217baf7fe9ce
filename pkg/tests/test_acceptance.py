"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) and
then asserts, so a failure is reported both ways.  Wall-clock budgets are
part of each criterion.
"""

import time

import numpy as np
import pytest

from riphs.core import GasPistonParams, eval_drift, make_gas_piston
from riphs.ivp import ControlSignal, balance_report, integrate
from riphs.mpc import MpcConfig, run_mpc
from riphs.ocp import OcpSpec, cost_and_gradient, direct_cost, reformulated_cost, rollout, solve_ocp, \
    tracking_integrand
from riphs.turnpike import exp_fit, solve_turnpike
from riphs.verify import estimate_growth_constant

from conftest import C_MAT, FIG4_PAIRS, FIG4_XTP, FIG5A_PAIRS, FIG5A_XTP, Y_REF, box, direct_network_rhs, \
    lam_from_pairs, network, record_criterion

pytestmark = pytest.mark.acceptance


def ocp_spec(pairs, T, ub, alpha, h=0.1):
    lo, hi = box(ub)
    return OcpSpec(network(pairs), T, h, alpha, C_MAT, Y_REF, lo, hi, np.zeros(5))


@pytest.fixture(scope="module")
def fig4_tp():
    lo, hi = box(10.0)
    return solve_turnpike(network(FIG4_PAIRS), 1.0, 1.0, C_MAT, Y_REF, lo, hi)


@pytest.fixture(scope="module")
def fig5a_tp():
    lo, hi = box(50.0)
    return solve_turnpike(network(FIG5A_PAIRS), 100.0, 1.0, C_MAT, Y_REF, lo, hi)


def test_criterion_01_fig4_turnpike():
    t = time.perf_counter()
    lo, hi = box(10.0)
    tp = solve_turnpike(network(FIG4_PAIRS), 1.0, 1.0, C_MAT, Y_REF, lo, hi)
    elapsed = time.perf_counter() - t
    err = float(np.max(np.abs(tp.x_tp - FIG4_XTP)))
    ok = record_criterion(1, "fig4 turnpike", err <= 0.05, f"x_tp={np.round(tp.x_tp, 4).tolist()}, max err {err:.4f}",
                          elapsed, 30)
    assert ok


def test_criterion_02_fig5a_turnpike():
    t = time.perf_counter()
    lo, hi = box(50.0)
    tp = solve_turnpike(network(FIG5A_PAIRS), 100.0, 1.0, C_MAT, Y_REF, lo, hi)
    elapsed = time.perf_counter() - t
    err = float(np.max(np.abs(tp.x_tp - FIG5A_XTP)))
    ok = record_criterion(2, "fig5a turnpike", err <= 0.05,
                          f"x_tp={np.round(tp.x_tp, 4).tolist()}, max err {err:.4f}", elapsed, 60)
    assert ok


def test_criterion_03_ocp_dwell(fig4_tp):
    t = time.perf_counter()
    sol = solve_ocp(ocp_spec(FIG4_PAIRS, 20.0, 10.0, (1, 1, 1)))
    elapsed = time.perf_counter() - t
    d = np.linalg.norm(sol.x_opt.states - fig4_tp.x_tp, axis=1)
    frac = float(np.mean(d <= 0.2))
    ok = record_criterion(3, "OCP turnpike dwell", sol.converged and d.min() <= 0.05 and frac >= 0.5,
                          f"converged={sol.converged}, min dist {d.min():.4f}, fraction within 0.2 {frac:.3f}",
                          elapsed, 300)
    assert ok


def test_criterion_04_exponential_approach(fig5a_tp):
    t = time.perf_counter()
    horizons = (25.0, 50.0, 100.0, 150.0, 200.0)
    dists = []
    for T in horizons:
        sol = solve_ocp(ocp_spec(FIG5A_PAIRS, T, 50.0, (1, 100, 1)))
        dists.append(float(np.min(np.linalg.norm(sol.x_opt.states - fig5a_tp.x_tp, axis=1))))
    elapsed = time.perf_counter() - t
    rate, _, r2 = exp_fit(horizons, dists)
    ok = record_criterion(4, "exponential approach", rate < 0 and r2 >= 0.9,
                          f"min dists {np.round(dists, 5).tolist()}, rate {rate:.5f}, R^2 {r2:.4f}", elapsed, 1800)
    assert ok


def test_criterion_05_mpc_approach(fig4_tp):
    t = time.perf_counter()
    dists, settled = [], []
    for T in (2.0, 4.0, 6.0, 8.0):
        cfg = MpcConfig(0.1, ocp_spec(FIG4_PAIRS, T, 10.0, (1, 1, 1)), 400)
        res = run_mpc(cfg, np.zeros(5), settle_window=5.0, settle_tol=1e-3)
        settled.append(res.settled)
        dists.append(np.inf if not res.settled else float(np.linalg.norm(res.settled_state - fig4_tp.x_tp)))
    elapsed = time.perf_counter() - t
    decreasing = all(a > b for a, b in zip(dists, dists[1:]))
    ok = record_criterion(5, "MPC turnpike approach", all(settled) and decreasing,
                          f"settled {settled}, distances {np.round(dists, 4).tolist()}", elapsed, 1200)
    assert ok


def gas_piston_lower_bound(p, x):
    t0, K1, K2, K3, K4 = p.t0, p.K1, p.K2, p.K3, p.K4
    x2, x3 = x[:, 1], x[:, 2]
    return t0 / K2 + K3 * x3**2 + K4 * x2 - (t0 / K2) * np.log(t0 * x2 ** (2 / 3) / (K1 * K2))


def test_criterion_06_balance_invariants():
    t = time.perf_counter()
    rng = np.random.default_rng(6)
    model = network(FIG4_PAIRS)
    worst_power, worst_slack = 0.0, np.inf
    for _ in range(20):
        u = ControlSignal(rng.uniform(-10, 10, (100, 5)), 0.1)
        traj = integrate(model, rng.uniform(-1, 3, 5), u, method="rk45", tol=1e-10)
        rep = balance_report(model, traj)
        worst_power = max(worst_power, rep.power_residual / (1 + np.abs(traj.H).max()))
        worst_slack = min(worst_slack, rep.entropy_slack)
    prm = GasPistonParams()
    gas = make_gas_piston(prm)
    min_x2, worst_bound = np.inf, np.inf
    for _ in range(20):
        u = ControlSignal(rng.uniform(-1, 1, (100, 1)), 0.1)
        x0 = [rng.uniform(-1, 1), rng.uniform(0.5, 2.0), rng.uniform(-1, 1)]
        traj = integrate(gas, x0, u, method="rk45", tol=1e-10)
        min_x2 = min(min_x2, float(traj.states[:, 1].min()))
        worst_bound = min(worst_bound, float(np.min(traj.E - gas_piston_lower_bound(prm, traj.states))))
    elapsed = time.perf_counter() - t
    ok = record_criterion(
        6, "balance invariants",
        worst_power <= 1e-7 and worst_slack >= -1e-9 and min_x2 > 0 and worst_bound >= -1e-9,
        f"power residual {worst_power:.2e}, entropy slack {worst_slack:.2e}, min x2 {min_x2:.3f}, "
        f"exergy bound slack {worst_bound:.2e}", elapsed, 120)
    assert ok


def fd_gradient(spec, U, eps=1e-6):
    G = np.zeros_like(U)
    for idx in np.ndindex(*U.shape):
        d = eps * (1 + abs(U[idx]))
        Up, Um = U.copy(), U.copy()
        Up[idx] += d
        Um[idx] -= d
        G[idx] = (rollout(spec, Up)[1] - rollout(spec, Um)[1]) / (2 * d)
    return G


def test_criterion_07_gradient_oracle():
    t = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(50):
        lo, hi = box(10.0)
        spec = OcpSpec(network(FIG4_PAIRS), 0.1 * int(rng.integers(1, 8)), 0.1, tuple(rng.uniform(0.1, 2, 3)), C_MAT,
                       Y_REF, lo, hi, rng.uniform(0, 3, 5), ("direct", "reformulated")[i % 2])
        U = spec.project(rng.uniform(-3, 3, (spec.K, 5)))
        _, G = cost_and_gradient(spec, U)
        F = fd_gradient(spec, U)
        worst = max(worst, float(np.linalg.norm(G - F) / np.linalg.norm(F)))
    elapsed = time.perf_counter() - t
    ok = record_criterion(7, "gradient oracle", worst <= 1e-5, f"worst relative error {worst:.2e} over 50 pairs",
                          elapsed, 120)
    assert ok


def test_criterion_08_cost_identity():
    t = time.perf_counter()
    rng = np.random.default_rng(8)
    model = network(FIG4_PAIRS)
    worst = 0.0
    for _ in range(10):
        u = ControlSignal(rng.uniform(-10, 10, (50, 5)), 0.1)
        traj = integrate(model, rng.uniform(-1, 3, 5), u, method="rk45", tol=1e-10,
                         quadratures={"tracking": tracking_integrand(C_MAT, Y_REF)})
        alpha = tuple(rng.uniform(0, 2, 3))
        d = direct_cost(model, traj, alpha, C_MAT, Y_REF)
        r = reformulated_cost(model, traj, alpha, C_MAT, Y_REF)
        worst = max(worst, abs(d - r) / (1 + abs(d)))
    elapsed = time.perf_counter() - t
    ok = record_criterion(8, "cost reformulation identity", worst <= 1e-6, f"worst scaled gap {worst:.2e}", elapsed, 60)
    assert ok


def test_criterion_09_growth_estimator():
    t = time.perf_counter()
    model = network(FIG4_PAIRS)
    est = estimate_growth_constant(model, 1.0, (1, 2, 5, 10, 20), 200, seed=0)
    rng = np.random.default_rng(9)
    margins = []
    for _ in range(20):
        u = ControlSignal(rng.uniform(-10, 10, (100, 5)), 0.1)
        traj = integrate(model, rng.uniform(-1, 3, 5), u, method="rk45", tol=1e-10)
        margins.append(balance_report(model, traj, est.c_hat, est.shift).exergy_bound_margin)
    elapsed = time.perf_counter() - t
    ok = record_criterion(9, "growth estimator", est.stable and min(margins) >= 0,
                          f"c_hat {est.c_hat:.4f}, shift {est.shift:.4f}, stable {est.stable}, "
                          f"min Gronwall margin {min(margins):.3e}", elapsed, 120)
    assert ok


def test_criterion_10_structural_form():
    t = time.perf_counter()
    rng = np.random.default_rng(10)
    lam = lam_from_pairs(5, FIG4_PAIRS)
    model = network(FIG4_PAIRS)
    X = rng.uniform(-3, 3, (1000, 5))
    ours = eval_drift(model, X)
    ref = np.array([direct_network_rhs(lam, x, np.zeros(5)) for x in X])
    # per state, relative to the largest component of the reference
    scale = np.maximum(np.max(np.abs(ref), axis=1), np.finfo(float).tiny)
    worst = float(np.max(np.max(np.abs(ours - ref), axis=1) / scale))
    elapsed = time.perf_counter() - t
    ok = record_criterion(10, "structural form", worst <= 1e-12, f"worst relative error {worst:.2e} at 1000 states",
                          elapsed, 1)
    assert ok
