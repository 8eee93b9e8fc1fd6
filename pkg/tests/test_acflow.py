import numpy as np
import pytest

from distvolt.acflow import NotConverged, linearization_error, solve_ac
from distvolt.network import build_network, linear_voltage
from distvolt.solver import initial_state, solve_sync

from oracles import random_tree_lines


def test_zero_injection_zero_load_flat_profile():
    m = build_network([(0, 1, 0.4, 0.2), (1, 2, 0.4, 0.2), (1, 3, 0.4, 0.2)])
    sol = solve_ac(m, np.zeros(3), np.zeros(3))
    assert sol.converged
    assert np.max(np.abs(sol.u - 1.0)) == 0.0


def test_two_bus_closed_form():
    r, x, P, Q = 0.08, 0.04, 0.3, 0.1
    m = build_network([(0, 1, r, x)], [P], [Q])
    sol = solve_ac(m, np.zeros(1), np.zeros(1))
    assert sol.converged
    b = 1.0 - 2.0 * (r * P + x * Q)
    c = (r * r + x * x) * (P * P + Q * Q)
    u_exact = np.sqrt((b + np.sqrt(b * b - 4.0 * c)) / 2.0)
    assert sol.u[0] == pytest.approx(u_exact, abs=1e-12)


def test_balance_residual_small(rng):
    lines = random_tree_lines(rng, 9, k_ratio=2.0, x_range=(0.01, 0.08))
    p_c = rng.uniform(0.0, 0.15, 9)
    q_c = rng.uniform(0.0, 0.08, 9)
    m = build_network(lines, p_c, q_c)
    sol = solve_ac(m, np.zeros(9), np.zeros(9))
    assert sol.converged
    assert sol.residual < 1e-8
    assert np.all(sol.u > 0)


def test_sweep_contracts_after_startup(eightbus):
    model, _, _ = eightbus
    sol = solve_ac(model, np.zeros(model.n), np.zeros(model.n), tol=1e-14)
    deltas = sol.delta_history
    assert len(deltas) >= 3
    for a, b in zip(deltas[2:], deltas[3:]):
        assert b <= a


def test_voltage_conversion_roundtrip(eightbus):
    model, _, _ = eightbus
    sol = solve_ac(model, np.zeros(model.n), np.zeros(model.n))
    v = 0.5 * sol.u ** 2
    assert np.max(np.abs(np.sqrt(2.0 * v) - sol.u)) < 1e-12


def test_linearization_error_zero_injection_no_load():
    m = build_network([(0, 1, 0.4, 0.2), (1, 2, 0.4, 0.2)])
    assert linearization_error(m, np.zeros(2), np.zeros(2)) < 1e-10


def test_linearization_error_scales_with_load(eightbus):
    model, _, _ = eightbus
    from distvolt.network import with_loads
    m_light = with_loads(model, 0.01 * model.p_load, 0.01 * model.q_load)
    err = linearization_error(m_light, np.zeros(model.n), np.zeros(model.n))
    assert err < 1e-3


def test_linearization_error_eightbus_full_load(eightbus):
    model, _, _ = eightbus
    err = linearization_error(model, np.zeros(model.n), np.zeros(model.n))
    assert err <= 0.02


def test_linearization_error_at_converged_control(eightbus, eightbus_solution):
    model, _, _ = eightbus
    st = eightbus_solution.state
    err = linearization_error(model, st.p, st.q)
    assert err <= 0.02


def test_infeasible_loading_flags_not_converged():
    # absurd loading collapses the sweep
    m = build_network([(0, 1, 2.0, 1.0)], [2.0], [1.0])
    sol = solve_ac(m, np.zeros(1), np.zeros(1), max_iter=50)
    assert not sol.converged
    with pytest.raises(NotConverged):
        linearization_error(m, np.zeros(1), np.zeros(1), max_iter=50)
