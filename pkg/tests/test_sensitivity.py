import numpy as np
import pytest

import voltctl.sensitivity as sensitivity
from conftest import TIGHT, injection, random_injection, two_bus
from voltctl.errors import PowerFlowDiverged
from voltctl.feeder import node_index
from voltctl.powerflow import solve
from voltctl.sensitivity import (build, cross_phase_mask, in_phase_dominance,
                                 per_phase_submatrices, perturbation_sign, phase_members, predict)


def own_rows(model):
    node_of = {(n.bus_id, n.phase): n.index for n in node_index(model)}
    return [[node_of[(pv.bus_id, ph)] for ph in pv.phases] for pv in model.pvs]


def slack_rows(model):
    return [n.index for n in node_index(model) if n.bus_id == model.slack_bus]


@pytest.fixture
def desk_state(desk30):
    inj = random_injection(desk30, 3)
    return desk30, inj, build(desk30, inj, opts=TIGHT)


def test_perturbation_direction():
    assert perturbation_sign(0.0, 5.0) == -1.0
    assert perturbation_sign(-3.0, 5.0) == 1.0
    assert perturbation_sign(2.0, 5.0) == -1.0


def test_rejects_non_positive_step(desk30):
    with pytest.raises(ValueError):
        build(desk30, random_injection(desk30, 1), delta_q=0.0)


def test_shape_and_slack_rows(desk_state):
    model, _, sm = desk_state
    assert sm.shape == (30, 3)
    assert np.all(sm.entries[slack_rows(model)] == 0.0)
    assert sm.invalid_columns == ()


def test_matches_central_difference():
    model = two_bus(0.01, 0.02, pv_kw=10.0, s_rating=11.111)
    inj = injection(model, load_kw=20.0, pv_kw=10.0)
    sm = build(model, inj, delta_q=0.1, opts=TIGHT)
    up = solve(model, inj.with_pv_kvar([0.1]), TIGHT).v_mag_pu
    down = solve(model, inj.with_pv_kvar([-0.1]), TIGHT).v_mag_pu
    assert sm.entries[:, 0] == pytest.approx(-(up - down) / 0.2, abs=1e-6)
    assert sm.steps[0] == -0.1


@pytest.mark.parametrize("name", ["desk_state", "mutual_state"])
def test_absorbing_lowers_own_phase(name, request):
    model, _, sm = request.getfixturevalue(name)
    mask = cross_phase_mask(sm, model)
    live = live_rows(model, sm)
    for j, rows in enumerate(own_rows(model)):
        assert np.all(sm.entries[rows, j] < 0)
        assert np.all(sm.entries[~mask[:, j] & live, j] < 0)


def test_absorbing_raises_other_phases_under_reactive_coupling(mutual_state):
    model, _, sm = mutual_state
    mask = cross_phase_mask(sm, model)
    live = live_rows(model, sm)
    for j in range(3):
        assert np.all(sm.entries[mask[:, j] & live, j] > 0)


def live_rows(model, sm):
    live = np.ones(sm.shape[0], dtype=bool)
    live[slack_rows(model)] = False
    return live


@pytest.fixture
def mutual_state(mutual_ov):
    inj = injection(mutual_ov, load_kw=6.0, pv_kw=[90.0, 45.0, 30.0])
    return mutual_ov, inj, build(mutual_ov, inj, opts=TIGHT)


def test_in_phase_entries_dominate_on_desk_feeder(desk_state):
    model, _, sm = desk_state
    assert in_phase_dominance(sm, model) == []


def test_predict_zero_change(desk_state):
    _, _, sm = desk_state
    assert np.all(predict(sm, np.zeros(3)) == 0)
    with pytest.raises(ValueError):
        predict(sm, np.zeros(2))


def test_predict_reproduces_measured_column(desk_state):
    model, inj, sm = desk_state
    base = solve(model, inj, TIGHT).v_mag_pu
    for j in range(3):
        dq = np.zeros(3)
        dq[j] = sm.steps[j]
        moved = solve(model, inj.with_pv_kvar(inj.pv_kvar + dq), TIGHT).v_mag_pu
        assert predict(sm, dq) == pytest.approx(moved - base, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_prediction_is_first_order_accurate(desk30, seed):
    inj = injection(desk30, load_kw=[l.kw_peak * 0.5 for l in desk30.loads],
                    pv_kw=[pv.p_mpp_kw for pv in desk30.pvs])
    sm = build(desk30, inj, opts=TIGHT)
    base = solve(desk30, inj, TIGHT).v_mag_pu
    dq = np.random.default_rng(seed).uniform(0.5, 2.0, 3)

    def error(change):
        moved = solve(desk30, inj.with_pv_kvar(change), TIGHT).v_mag_pu
        return np.max(np.abs(predict(sm, change) - (moved - base)))

    full, half = error(dq), error(dq / 2)
    assert full <= 2e-3
    assert half <= 0.6 * full


def test_linearization_error_shrinks_on_two_bus():
    model = two_bus(0.02, 0.04, pv_kw=10.0, s_rating=11.111)
    inj = injection(model, load_kw=30.0, pv_kw=10.0)
    sm = build(model, inj, opts=TIGHT)
    base = solve(model, inj, TIGHT).v_mag_pu

    def error(dq):
        moved = solve(model, inj.with_pv_kvar([dq]), TIGHT).v_mag_pu
        return abs(predict(sm, [dq])[1] - (moved[1] - base[1]))

    assert error(1.0) <= 0.6 * error(2.0)


def test_per_phase_submatrices_are_exact_restrictions(mutual_state):
    model, _, sm = mutual_state
    subs = per_phase_submatrices(sm, model)
    for ph, (rows, cols) in phase_members(model).items():
        assert np.array_equal(subs[ph].entries, sm.entries[np.ix_(rows, cols)])
        assert subs[ph].rows == tuple(rows)
        assert subs[ph].cols == tuple(cols)
        assert np.all(subs[ph].entries <= 0)
    assert np.any(sm.entries > 0)


def test_single_phase_feeder_has_empty_other_phases():
    model = two_bus(0.01, 0.02, pv_kw=10.0, s_rating=11.111)
    sm = build(model, injection(model, pv_kw=10.0))
    subs = per_phase_submatrices(sm, model)
    assert np.array_equal(subs["A"].entries, sm.entries)
    assert subs["B"].shape == (0, 0)
    assert subs["C"].shape == (0, 0)


def test_build_is_deterministic(desk30):
    inj = random_injection(desk30, 11)
    serial = build(desk30, inj)
    pooled = build(desk30, inj, workers=3)
    assert np.array_equal(serial.entries, pooled.entries)
    assert serial.fingerprint() == pooled.fingerprint()


def test_restrict_keeps_full_model_indices(desk_state):
    _, _, sm = desk_state
    sub = sm.restrict([3, 5, 7], [2])
    assert sub.entries[:, 0] == pytest.approx(sm.entries[[3, 5, 7], 2])
    assert sub.rows == (3, 5, 7)
    assert sub.cols == (2,)


def test_selected_columns_leave_others_zero(desk30):
    inj = random_injection(desk30, 2)
    sm = build(desk30, inj, columns=[1])
    assert np.all(sm.entries[:, [0, 2]] == 0)
    assert np.any(sm.entries[:, 1] != 0)


def test_diverging_perturbation_zero_fills_column(desk30, monkeypatch):
    inj = random_injection(desk30, 4)
    base = solve(desk30, inj)
    real_solve = sensitivity.solve

    def flaky(model, state, opts=None, initial=None):
        if state.pv_kvar[1] != inj.pv_kvar[1]:
            raise PowerFlowDiverged("forced", [], None)
        return real_solve(model, state, opts, initial)

    monkeypatch.setattr(sensitivity, "solve", flaky)
    sm = build(desk30, inj, base=base)
    assert sm.invalid_columns == (1,)
    assert np.all(sm.entries[:, 1] == 0)
    assert np.any(sm.entries[:, 0] != 0)


def test_retry_halves_the_step(desk30, monkeypatch):
    inj = random_injection(desk30, 5)
    base = solve(desk30, inj)
    real_solve = sensitivity.solve
    calls = []

    def once(model, state, opts=None, initial=None):
        calls.append(state.pv_kvar.copy())
        if len(calls) == 1:
            raise PowerFlowDiverged("forced", [], None)
        return real_solve(model, state, opts, initial)

    monkeypatch.setattr(sensitivity, "solve", once)
    sm = build(desk30, inj, base=base, columns=[0])
    assert abs(sm.steps[0]) == 0.5
    assert sm.invalid_columns == ()
