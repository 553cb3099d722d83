import time

import numpy as np
import pytest

from stivsa.case_model import BusKind, build_admittance, scale_load
from stivsa.power_flow import (IslandedNetworkError, OperatingPoint, PfOptions, PowerFlowDiverged, branch_flow,
                               build_jacobian, calculated_injection, compute_mismatch, generator_q,
                               initial_point, partition, solve_power_flow)

from conftest import two_bus
from oracles import straight_line_nr


def fd_jacobian(case, point, h=1e-6):
    ang, mag = partition(point.bus_kinds)
    Y = build_admittance(case)
    cols = []
    for kind, idx in [("a", k) for k in ang] + [("m", k) for k in mag]:
        up = [point.v_mag.copy(), point.v_ang.copy()]
        dn = [point.v_mag.copy(), point.v_ang.copy()]
        slot = 1 if kind == "a" else 0
        up[slot][idx] += h
        dn[slot][idx] -= h
        s_up = calculated_injection(case, point.with_state(*up), Y)
        s_dn = calculated_injection(case, point.with_state(*dn), Y)
        d = (s_up - s_dn) / (2 * h)
        cols.append(np.r_[d.real[ang], d.imag[mag]])
    return np.column_stack(cols)


def test_flat_start_iterates(case14):
    p = initial_point(case14)
    assert p.v_mag[case14.bus_index[2]] == pytest.approx(1.045)
    assert p.v_mag[case14.bus_index[14]] == 1.0
    assert np.all(p.v_ang == 0)


def test_base_matches_oracle(case14):
    point = solve_power_flow(case14)
    vm, va = straight_line_nr(case14)
    np.testing.assert_allclose(point.v_mag, vm, atol=1e-8)
    np.testing.assert_allclose(point.v_ang, va, atol=1e-8)
    assert np.max(np.abs(compute_mismatch(case14, point))) <= 1e-8
    assert point.iterations <= 6


def test_known_case14_solution(case14):
    # the file stores a rounded published solution of the same case
    point = solve_power_flow(case14)
    np.testing.assert_allclose(point.v_mag, [b.v_mag for b in case14.buses], atol=2e-3)
    np.testing.assert_allclose(np.degrees(point.v_ang), np.degrees([b.v_ang for b in case14.buses]), atol=0.02)


def test_quadratic_convergence(case14):
    trace = solve_power_flow(case14, PfOptions(tol=1e-13)).trace
    # once in the basin each error is bounded by a constant times the square of the previous one
    tail = [t for t in trace if t < 1e-1 and t > 1e-13]
    for a, b in zip(tail, tail[1:]):
        assert b <= 10 * a * a


@pytest.mark.parametrize("seed", range(20))
def test_jacobian_fd(case14, seed):
    rng = np.random.default_rng(seed)
    base = solve_power_flow(case14)
    point = base.with_state(base.v_mag * (1 + 0.05 * rng.standard_normal(14)),
                            base.v_ang + 0.1 * rng.standard_normal(14))
    J = build_jacobian(case14, point).full()
    J_fd = fd_jacobian(case14, point)
    assert np.max(np.abs(J - J_fd)) / np.max(np.abs(J_fd)) <= 1e-5


def test_jacobian_fd_with_switched_kinds(case14, peak_point, case14_peak):
    assert any(k is BusKind.PQ and n is BusKind.PV for k, n in zip(peak_point.bus_kinds, case14_peak.kinds))
    J = build_jacobian(case14_peak, peak_point).full()
    J_fd = fd_jacobian(case14_peak, peak_point)
    assert np.max(np.abs(J - J_fd)) / np.max(np.abs(J_fd)) <= 1e-5


def test_loss_balance(case14, base_point):
    s_inj = calculated_injection(case14, base_point).sum() * case14.base_mva
    flows = sum(sum(branch_flow(case14, base_point, k)) for k in range(len(case14.branches)))
    V = base_point.v_mag
    shunt = sum(abs(V[k]) ** 2 * complex(b.shunt_g, -b.shunt_b) for k, b in enumerate(case14.buses))
    assert s_inj == pytest.approx(flows + shunt * case14.base_mva, abs=1e-8)
    assert s_inj.real > 0  # resistive losses


def test_generator_balance(case14, base_point):
    s = calculated_injection(case14, base_point) * case14.base_mva
    qg = generator_q(case14, base_point)
    q_bus = np.zeros(14)
    np.add.at(q_bus, case14.gen_bus, qg)
    loads = np.array([b.q_load for b in case14.buses])
    np.testing.assert_allclose(q_bus - loads, s.imag, atol=1e-8)
    np.testing.assert_allclose(base_point.q_gen, qg, atol=1e-12)


def test_q_limits_enforced(case14_peak, peak_point):
    assert np.max(np.abs(compute_mismatch(case14_peak, peak_point))) <= 1e-8
    for b in np.unique(case14_peak.gen_bus):
        gens = case14_peak.gens_at(b)
        qmin, qmax = case14_peak.bus_q_limits(b)
        if peak_point.bus_kinds[b] is BusKind.PV:
            assert qmin - 1e-6 <= peak_point.q_gen[gens].sum() <= qmax + 1e-6
        elif peak_point.bus_kinds[b] is BusKind.PQ:
            assert peak_point.q_gen[gens].sum() in (pytest.approx(qmin), pytest.approx(qmax))


def test_q_limit_switching_idempotent(case14_peak, peak_point):
    again = solve_power_flow(case14_peak, PfOptions(enforce_q_limits=True), start=peak_point)
    assert again.bus_kinds == peak_point.bus_kinds
    # the Q-limit solution is a fixed point: no extra Newton work, no kind changes
    np.testing.assert_allclose(again.v_mag, peak_point.v_mag, atol=1e-9)
    assert again.iterations == 0


def test_no_q_limits_violates_at_peak(case14_peak):
    free = solve_power_flow(case14_peak)
    assert free.bus_kinds == case14_peak.kinds
    viol = [b for b in np.unique(case14_peak.gen_bus)
            if case14_peak.kinds[b] is BusKind.PV
            and not (case14_peak.bus_q_limits(b)[0] <= free.q_gen[case14_peak.gens_at(b)].sum()
                     <= case14_peak.bus_q_limits(b)[1])]
    assert viol


def test_two_bus_closed_form():
    # lossless line, unity-pf load: V^4 - V^2 + X^2 P^2 = 0 (E = 1)
    x, p = 0.1, 2.0
    case = two_bus(p_load=p * 100, x=x)
    point = solve_power_flow(case)
    v = point.v_mag[1]
    assert v ** 4 - v ** 2 + (x * p) ** 2 == pytest.approx(0, abs=1e-10)
    assert v > np.sqrt(0.5)  # upper branch of the nose curve


def test_diverges_beyond_nose():
    # maximum unity-pf load is E^2/(2X) = 5 pu
    with pytest.raises(PowerFlowDiverged) as info:
        solve_power_flow(two_bus(p_load=700, x=0.1))
    assert info.value.trace


def test_islanded_network_rejected(case14):
    with pytest.raises(IslandedNetworkError):
        solve_power_flow(case14.with_outage(case14.branch_by_label("7-8")))


def test_warm_start_from_solution(case14, base_point):
    again = solve_power_flow(case14, PfOptions(), start=base_point.with_state(base_point.v_mag, base_point.v_ang,
                                                                               bus_kinds=case14.kinds))
    assert again.iterations <= 1


def test_branch_flow_two_bus():
    case = two_bus(p_load=100, x=0.1)
    point = solve_power_flow(case)
    s_ij, s_ji = branch_flow(case, point, 0)
    assert s_ji.real == pytest.approx(-100, abs=1e-6)
    assert s_ij.real == pytest.approx(100, abs=1e-6)  # lossless
    assert s_ij.imag + s_ji.imag > 0  # reactive loss in the series reactance


def test_operating_point_equality(base_point):
    same = base_point.with_state(base_point.v_mag.copy(), base_point.v_ang.copy())
    assert same == base_point
    assert base_point.with_state(base_point.v_mag + 1e-3, base_point.v_ang) != base_point


def test_options_validated():
    with pytest.raises(ValueError):
        PfOptions(tol=0)
    with pytest.raises(ValueError):
        PfOptions(max_iter=0)


def test_dimension_check(case14, base_point):
    bad = OperatingPoint(base_point.v_mag[:5], base_point.v_ang, base_point.q_gen, base_point.bus_kinds)
    with pytest.raises(ValueError):
        compute_mismatch(case14, bad)


def test_runtime(case14):
    solve_power_flow(case14)
    t0 = time.perf_counter()
    for _ in range(10):
        solve_power_flow(case14)
    assert (time.perf_counter() - t0) / 10 < 0.05


def test_load_growth_lowers_voltage(case14):
    v1 = solve_power_flow(case14).v_mag
    v2 = solve_power_flow(scale_load(case14, 1.3)).v_mag
    pq = [k for k, kd in enumerate(case14.kinds) if kd is BusKind.PQ]
    assert np.all(v2[pq] < v1[pq])
