import json

import numpy as np
import pytest

from riphs.core import ModelSpec, exergy
from riphs.errors import InvalidParams
from riphs.ivp import ControlSignal, balance_report, integrate
from riphs.verify import estimate_growth_constant, radial_probe, verify_report, write_verify_json

from conftest import network


def uncontrolled_model():
    return ModelSpec(
        n=1, m=1, j0=lambda x: np.zeros((1, 1)), jk=np.zeros((0, 1, 1)),
        hamiltonian=lambda x: np.sum(np.exp(x), axis=-1), hamiltonian_grad=np.exp,
        entropy=lambda x: x[..., 0], entropy_grad=np.ones_like,
        gamma=[], input_map=lambda x, hx: np.zeros((1, 1)), t0=1.0,
    )


def test_single_compartment_is_stable():
    est = estimate_growth_constant(network({}, n=1), 1.0, (1, 2, 5, 10, 20), 200, seed=0)
    assert np.isfinite(est.c_hat) and est.c_hat > 0
    assert est.stable
    assert est.sample_count == 1000
    # E = e^x - x >= 1 in one dimension, so no shift beyond the unit margin is needed
    assert est.shift == 1.0


def test_no_input_gives_zero_constant():
    est = estimate_growth_constant(uncontrolled_model())
    assert est.c_hat == 0.0 and est.stable


def test_fig4_network_is_stable(fig4_model):
    est = estimate_growth_constant(fig4_model, 1.0, (1, 2, 5, 10, 20), 200, seed=0)
    assert 0 < est.c_hat < np.inf and est.stable
    assert est.max_ratio_location.shape == (5,)
    X = np.asarray(est.max_ratio_location)
    assert exergy(fig4_model, X) + est.shift > 0


def test_nested_radii_monotone_and_deterministic(fig4_model):
    radii = (1, 2, 5, 10, 20, 50)
    c = [estimate_growth_constant(fig4_model, 1.0, radii[:k], 50, seed=3).c_hat for k in range(1, len(radii) + 1)]
    assert all(a <= b for a, b in zip(c, c[1:]))
    a = estimate_growth_constant(fig4_model, 1.0, radii, 50, seed=3)
    b = estimate_growth_constant(fig4_model, 1.0, radii, 50, seed=3)
    assert a.c_hat == b.c_hat and a.tier_max == b.tier_max
    np.testing.assert_array_equal(a.max_ratio_location, b.max_ratio_location)


def test_estimate_validation(fig4_model):
    with pytest.raises(InvalidParams):
        estimate_growth_constant(fig4_model, radii=(2, 1))
    with pytest.raises(InvalidParams):
        estimate_growth_constant(fig4_model, p=0.5)
    with pytest.raises(InvalidParams):
        estimate_growth_constant(fig4_model, samples_per_radius=0)
    assert not estimate_growth_constant(fig4_model, radii=(1, 2), samples_per_radius=10).stable


def test_gas_piston_samples_respect_domain(gas_piston):
    est = estimate_growth_constant(gas_piston, 1.0, (1, 2, 5, 10, 20), 100, seed=0)
    assert est.max_ratio_location[1] > 0
    assert np.isfinite(est.c_hat)


def test_radial_probe_heat_exchangers(fig4_model, two_compartment):
    for model in (fig4_model, two_compartment, network({}, n=1)):
        rep = radial_probe(model, directions=32, seed=0)
        assert rep["passed"], rep["failures"][:1]
        assert rep["directions"] == 32


def test_radial_probe_gas_piston(gas_piston):
    assert radial_probe(gas_piston, directions=32, seed=1)["passed"]


def test_gas_piston_grows_along_cooling_rays(gas_piston):
    radii = np.array([1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0])
    rng = np.random.default_rng(5)
    for _ in range(10):
        d = np.array([-rng.uniform(0.2, 1.0), rng.uniform(0.05, 1.0), rng.uniform(-1.0, 1.0)])
        d /= np.linalg.norm(d)
        E = exergy(gas_piston, radii[:, None] * d)
        assert np.all(np.diff(E[3:]) > 0) and E[-1] >= 10 * E[0]
        # at large radius the -T0 S term is already a lower bound
        assert E[-1] >= -gas_piston.t0 * 100 * d[0]


def test_radial_probe_reports_failures():
    # a bounded exergy cannot grow tenfold
    flat = ModelSpec(
        n=2, m=1, j0=lambda x: np.zeros((2, 2)), jk=np.zeros((0, 2, 2)),
        hamiltonian=lambda x: np.tanh(np.sum(x**2, axis=-1)) + 1.0, hamiltonian_grad=lambda x: np.zeros_like(x),
        entropy=lambda x: np.zeros(x.shape[:-1]), entropy_grad=np.zeros_like,
        gamma=[], input_map=lambda x, hx: np.ones((2, 1)), t0=1.0,
    )
    rep = radial_probe(flat, directions=4)
    assert not rep["passed"] and len(rep["failures"]) == 4
    with pytest.raises(InvalidParams):
        radial_probe(flat, radii=(1.0,))


def test_gronwall_bound_on_random_simulations(fig4_model):
    est = estimate_growth_constant(fig4_model, 1.0, (1, 2, 5, 10, 20), 200, seed=0)
    rng = np.random.default_rng(20)
    for _ in range(20):
        u = ControlSignal(rng.uniform(-5, 5, (20, 5)), 0.1)
        traj = integrate(fig4_model, rng.uniform(-2, 2, 5), u, tol=1e-9)
        rep = balance_report(fig4_model, traj, est.c_hat, est.shift)
        assert rep.exergy_bound_margin >= 0


def test_report_json(tmp_path, fig4_model):
    est = estimate_growth_constant(fig4_model, samples_per_radius=20)
    rep = verify_report(est, radial_probe(fig4_model, directions=4))
    path = tmp_path / "verify.json"
    write_verify_json(rep, path)
    data = json.loads(path.read_text())
    assert {"c_hat", "shift", "p", "stable", "failures"} <= set(data)
    assert data["failures"] == []
