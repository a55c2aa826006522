from dataclasses import replace

import numpy as np
import pytest

from conftest import TIGHT, injection, load_feeder, random_injection, random_radial, two_bus
from oracles import newton_voltages, two_bus_voltage
from voltctl.errors import PowerFlowDiverged
from voltctl.feeder import PvSystem, node_index
from voltctl.powerflow import (InjectionState, RadialNetwork, SolverOptions, VoltageLimits,
                               VoltageSolution, check_injection, count_violations, q_headroom,
                               solve)


def magnitude(model, sol, bus, phase):
    node = next(n for n in node_index(model) if n.bus_id == bus and n.phase == phase)
    return sol.v_mag_pu[node.index]


def fixed_solution(values):
    v = np.array(values, dtype=complex)
    return VoltageSolution(v, np.abs(v), 1, True, 0.0)


def test_two_bus_matches_closed_form():
    model = two_bus(0.01, 0.02)
    sol = solve(model, injection(model, load_kw=50.0, load_kvar=20.0), TIGHT)
    expected = two_bus_voltage(0.5, 0.2, 0.01, 0.02)
    assert sol.converged
    assert magnitude(model, sol, "b1", "A") == pytest.approx(expected, abs=1e-6)


@pytest.mark.parametrize("p,q", [(0.2, 0.05), (0.8, 0.3), (-0.6, 0.1)])
def test_two_bus_across_operating_points(p, q):
    model = two_bus(0.02, 0.03)
    sol = solve(model, injection(model, load_kw=100 * p, load_kvar=100 * q), TIGHT)
    assert magnitude(model, sol, "b1", "A") == pytest.approx(
        two_bus_voltage(p, q, 0.02, 0.03), abs=1e-6)


def test_zero_injection_gives_flat_profile(desk30):
    sol = solve(desk30, InjectionState.idle(desk30))
    assert np.allclose(sol.v_mag_pu, desk30.slack_voltage_pu, atol=1e-12)


def test_regulator_ratio_scales_downstream_voltage(desk30):
    boosted = desk30.with_settings(taps={"reg1": 1.03125})
    sol = solve(boosted, InjectionState.idle(boosted))
    for phase in "ABC":
        assert magnitude(boosted, sol, "r1", phase) == pytest.approx(
            1.03125 * magnitude(boosted, sol, "t2", phase), abs=1e-12)
    assert magnitude(boosted, sol, "la2", "A") == pytest.approx(1.03125, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_matches_newton_on_random_feeders(seed):
    model = random_radial(seed)
    assert len(node_index(model)) <= 40
    inj = random_injection(model, seed)
    sol = solve(model, inj, TIGHT)
    reference = newton_voltages(model, inj)
    assert np.max(np.abs(sol.v_mag_pu - np.abs(reference))) <= 1e-5


@pytest.mark.parametrize("name", ["desk30", "mutual_ov"])
def test_matches_newton_on_shipped_feeders(name):
    model = load_feeder(name).with_settings(taps={"reg1": 1.0125}, capacitors={"cap1": True})
    inj = random_injection(model, 3, pv_share=0.9)
    sol = solve(model, inj, TIGHT)
    assert np.max(np.abs(sol.v_complex - newton_voltages(model, inj))) <= 1e-5


@pytest.mark.parametrize("seed", range(3))
def test_power_balance(seed):
    model = random_radial(seed + 10)
    inj = random_injection(model, seed)
    sol = solve(model, inj, TIGHT)
    net = RadialNetwork.of(model)
    s_const, qc = net.demand(inj)
    consumed = np.sum(s_const - 1j * qc * sol.v_mag_pu ** 2) * model.s_base_kva
    assert sol.slack_kva == pytest.approx(consumed + sol.loss_kva, abs=1e-6)
    assert sol.loss_kva.real >= 0


def test_more_pv_raises_leaf_voltage(desk30):
    model = desk30.with_pvs([PvSystem("leaf", "la2", ("A",), 20.0, 20.0, 0.0)])
    base = injection(model, load_kw=[l.kw_peak * 0.4 for l in model.loads])
    low = solve(model, replace(base, pv_kw=np.array([0, 0, 0, 5.0])))
    high = solve(model, replace(base, pv_kw=np.array([0, 0, 0, 15.0])))
    assert magnitude(model, high, "la2", "A") > magnitude(model, low, "la2", "A")


def test_solutions_are_bit_identical_and_read_only(desk30):
    inj = random_injection(desk30, 1)
    first, second = solve(desk30, inj), solve(desk30, inj)
    assert np.array_equal(first.v_complex, second.v_complex)
    assert first.iterations == second.iterations
    assert not first.v_mag_pu.flags.writeable
    with pytest.raises(ValueError):
        first.v_mag_pu[0] = 2.0


def test_converged_solution_meets_tolerance(desk30):
    opts = SolverOptions(tolerance=1e-8)
    sol = solve(desk30, random_injection(desk30, 2), opts)
    assert sol.converged
    assert sol.max_mismatch <= 1e-8
    assert np.array_equal(sol.v_mag_pu, np.abs(sol.v_complex))
    assert len(sol.trace) == sol.iterations


def test_collapse_raises_with_trace():
    model = two_bus(0.1, 0.2)
    with pytest.raises(PowerFlowDiverged) as info:
        solve(model, injection(model, load_kw=500.0, load_kvar=200.0))
    assert info.value.trace
    assert info.value.exit_code == 3


def test_iteration_cap_raises():
    model = two_bus(0.05, 0.1)
    with pytest.raises(PowerFlowDiverged):
        solve(model, injection(model, load_kw=80.0), SolverOptions(tolerance=1e-14, max_iter=2))


def test_count_violations_flat():
    assert tuple(count_violations(fixed_solution([1.0, 1.0]), VoltageLimits())) == (0, 0, 1.0, 1.0)


def test_count_violations_reports_worst():
    count = count_violations(fixed_solution([1.0, 1.0681, 0.94]), VoltageLimits())
    assert count.over == 1
    assert count.under == 1
    assert count.total == 2
    assert count.worst_hi == pytest.approx(1.0681)
    assert count.worst_lo == pytest.approx(0.94)


def test_count_violations_matches_rescan(desk30):
    model = desk30.with_pvs([PvSystem(f"x{k}", bus, (ph,), 40.0, 40.0, 0.0)
                             for k, (bus, ph) in enumerate([("la2", "A"), ("lb2", "B"),
                                                            ("lc2", "C"), ("t5", "A")])])
    inj = injection(model, load_kw=[l.kw_peak * 0.3 for l in model.loads],
                    pv_kw=[pv.p_mpp_kw for pv in model.pvs])
    sol = solve(model, inj)
    limits = VoltageLimits()
    count = count_violations(sol, limits)
    over = sum(1 for v in sol.v_mag_pu if v > limits.v_th_max)
    under = sum(1 for v in sol.v_mag_pu if v < limits.v_th_min)
    assert (count.over, count.under) == (over, under)
    assert count.worst_hi == max(sol.v_mag_pu)


def test_count_violations_on_node_subset():
    sol = fixed_solution([1.06, 1.0, 0.9])
    count = count_violations(sol, VoltageLimits(), nodes=[1, 2])
    assert (count.over, count.under) == (0, 1)


def test_limits_parse_adds_guard_band():
    limits = VoltageLimits.parse("0.94,1.06")
    assert limits.v_pu_min == pytest.approx(0.945)
    assert limits.v_pu_max == pytest.approx(1.055)
    assert VoltageLimits.parse("0.95,1.05,0.96,1.04").v_pu_max == 1.04


@pytest.mark.parametrize("args", [(0.95, 1.05, 0.94, 1.045), (1.01, 1.05, 1.02, 1.04),
                                  (0.95, 1.05, 1.0, 0.99)])
def test_limits_reject_bad_orderings(args):
    with pytest.raises(ValueError):
        VoltageLimits(*args)


def test_q_headroom_actual_is_larger_at_partial_output(desk30):
    inj = injection(desk30, pv_kw=[pv.p_mpp_kw * 0.5 for pv in desk30.pvs])
    rated = q_headroom(desk30, inj)
    actual = q_headroom(desk30, inj, actual=True)
    assert np.all(actual > rated)


def test_check_injection_flags_excess_q(desk30):
    inj = injection(desk30, pv_kw=[pv.p_mpp_kw for pv in desk30.pvs])
    assert check_injection(desk30, inj) == []
    bad = inj.with_pv_kvar([desk30.pvs[0].q_max_kvar + 1.0, 0.0, 0.0])
    problems = check_injection(desk30, bad)
    assert len(problems) == 1
    assert "PV-E1" in problems[0]
