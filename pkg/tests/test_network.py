import numpy as np
import pytest

from distvolt.errors import (DimensionMismatch, NonHomogeneous,
                             NonPositiveReactance, NotATree)
from distvolt.network import (balance_offsets, build_network, linear_voltage,
                              load_feeder, with_loads)

from oracles import laplacian_plus_shunt, random_tree_lines


def test_single_line_matrices():
    m = build_network([(0, 1, 1.0, 0.5)])
    assert m.B == pytest.approx(np.array([[2.0]]))
    assert m.X == pytest.approx(np.array([[0.5]]))
    assert m.k_ratio == 2.0


def test_eightbus_structure(eightbus):
    model, _, _ = eightbus
    assert model.k_ratio == pytest.approx(2.0)
    L = laplacian_plus_shunt(model.lines, model.n)
    assert np.max(np.abs(model.B - L)) < 1e-10
    # exactly one bus hangs off the substation in this feeder
    assert list(model.root_adjacent) == [0]


@pytest.mark.parametrize("seed", range(6))
def test_random_tree_identities(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 12))
    lines = random_tree_lines(rng, n, k_ratio=2.0)
    m = build_network(lines)
    eye = np.eye(n)
    assert np.max(np.abs(m.B @ m.X - eye)) < 1e-10
    L = laplacian_plus_shunt(m.lines, n)
    assert np.max(np.abs(m.B - L)) < 1e-10
    m0 = np.array([1.0 if a == 0 else 0.0 for a, _, _, _ in m.lines])
    ones = -np.linalg.solve(m.M.T, m0)
    assert np.max(np.abs(ones - 1.0)) < 1e-10
    assert np.max(np.abs(m.B - m.B.T)) < 1e-12
    assert np.linalg.eigvalsh(m.B)[0] > 0
    # homogeneous: R = K X entrywise
    assert np.max(np.abs(m.R - 2.0 * m.X)) < 1e-10


def test_b2_pattern_matches_two_hop(rng):
    lines = random_tree_lines(rng, 9, k_ratio=1.5)
    m = build_network(lines)
    for j in range(m.n):
        allowed = set(m.b2_support[j])
        nonzero = set(np.flatnonzero(np.abs(m.B2[j]) > 0).tolist())
        assert nonzero <= allowed


def test_linear_voltage_identities(rng):
    lines = random_tree_lines(rng, 8, k_ratio=2.0)
    p_c = rng.uniform(0.0, 0.05, 8)
    q_c = rng.uniform(0.0, 0.05, 8)
    m = build_network(lines, p_c, q_c)
    p = rng.normal(0.0, 0.02, 8)
    q = rng.normal(0.0, 0.02, 8)
    v = linear_voltage(m, p, q)
    # power-balance form of the same equation
    assert np.max(np.abs(m.B @ v - (m.k_ratio * p + q + m.balance_offset))) < 1e-10
    # homogeneous model is X-driven up to a constant
    v2 = linear_voltage(m, p * 0, q * 0)
    assert np.max(np.abs((v - v2) - m.X @ (m.k_ratio * p + q))) < 1e-10


def test_single_bus_no_net_injection_keeps_substation_voltage():
    m = build_network([(0, 1, 1.0, 0.5)], p_load=[0.3], q_load=[0.1])
    v = linear_voltage(m, np.array([0.3]), np.array([0.1]))
    assert v[0] == pytest.approx(m.v0)


def test_pure_load_depresses_voltage(eightbus):
    model, _, _ = eightbus
    v = linear_voltage(model, np.zeros(model.n), np.zeros(model.n))
    assert np.all(v < model.v0)


def test_offsets_zero_load_at_reference_voltage():
    lines = [(0, 1, 0.9216, 0.4608), (1, 2, 0.9216, 0.4608)]
    m = build_network(lines, v0_pu=1.0)
    w_s, w_a = balance_offsets(m, np.zeros(2), np.zeros(2))
    # with v0 = v_ref every entry of the deviation-form constant vanishes
    assert np.max(np.abs(w_a)) < 1e-12
    # root-adjacent bus carries 1/(2 x) in B v_ref
    bv = m.B @ m.v_ref
    assert bv[0] == pytest.approx(1.0 / (2.0 * 0.4608))
    assert abs(bv[0] - 1.0851) < 1e-3
    assert bv[1] == pytest.approx(0.0, abs=1e-12)


def test_offsets_match_no_control_voltage(eightbus):
    model, _, _ = eightbus
    w_s, _ = balance_offsets(model, model.p_load, model.q_load)
    v0ctl = linear_voltage(model, np.zeros(model.n), np.zeros(model.n))
    assert np.max(np.abs(model.B @ v0ctl - w_s)) < 1e-10


def test_offset_dimension_mismatch(eightbus):
    model, _, _ = eightbus
    with pytest.raises(DimensionMismatch):
        balance_offsets(model, np.zeros(3), np.zeros(model.n))
    with pytest.raises(DimensionMismatch):
        linear_voltage(model, np.zeros(model.n), np.zeros(2))


def test_build_errors():
    with pytest.raises(NotATree):
        # loop 2-3-4 never reached from the substation
        build_network([(0, 1, 1.0, 0.5), (2, 3, 1.0, 0.5),
                       (3, 4, 1.0, 0.5), (4, 2, 1.0, 0.5)])
    with pytest.raises(NotATree):
        build_network([(0, 1, 1.0, 0.5), (1, 2, 1.0, 0.5), (2, 0, 1.0, 0.5)])
    with pytest.raises(NotATree):
        build_network([(0, 1, 1.0, 0.5), (2, 3, 1.0, 0.5)])  # disconnected / bad ids
    with pytest.raises(NonPositiveReactance):
        build_network([(0, 1, 1.0, -0.5)])
    with pytest.raises(NonHomogeneous):
        build_network([(0, 1, 1.0, 0.5), (1, 2, 1.1, 0.5)])
    # approximate ratio policy accepts the same data
    m = build_network([(0, 1, 1.0, 0.5), (1, 2, 1.1, 0.5)],
                      k_policy="approximate", k0=1.0)
    assert m.k_ratio == 1.0
    assert m.ratio_spread > 0.1


def test_with_loads_refreshes_offsets(eightbus):
    model, _, _ = eightbus
    double = with_loads(model, 2 * model.p_load, 2 * model.q_load)
    w_s, w_a = balance_offsets(model, 2 * model.p_load, 2 * model.q_load)
    assert np.max(np.abs(double.balance_offset - w_s)) == 0.0
    assert np.max(np.abs(double.dev_offset - w_a)) == 0.0


def test_file_loading_roundtrip(tmp_path):
    feeder = tmp_path / "f.csv"
    feeder.write_text("from,to,r_ohm,x_ohm\n0,1,2.0,1.0\n1,2,2.0,1.0\n")
    loads = tmp_path / "l.csv"
    loads.write_text("bus,p_kw,q_kvar\n1,100.0,50.0\n2,40.0,20.0\n")
    m = load_feeder(feeder, loads, s_base_mva=10.0, v_base_kv=2.0)
    z_base = 4.0 / 10.0
    assert m.lines[0][3] == pytest.approx(1.0 / z_base)
    assert m.p_load[0] == pytest.approx(100.0 / 10_000.0)
    assert m.pu_to_kw(m.p_load)[0] == pytest.approx(100.0)
