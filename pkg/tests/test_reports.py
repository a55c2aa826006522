import json

import numpy as np
import pytest

from conftest import far_overvoltage, injection
from voltctl.coordinator import dispatch, dispatch_zoned
from voltctl.harness import HcReport, Limiting, SweepRow
from voltctl.powerflow import solve
from voltctl.reports import (DISPATCH_COLUMNS, SWEEP_COLUMNS, TRACE_COLUMNS, VOLTAGE_COLUMNS,
                             read_csv, summary_lines, write_dispatch, write_hc_reports,
                             write_sensitivity, write_sweep, write_trace, write_voltages,
                             write_zoned_comparison)
from voltctl.sensitivity import build


@pytest.fixture
def quiet(desk30):
    inj = injection(desk30, load_kw=[l.kw_peak * 0.3 for l in desk30.loads],
                    pv_kw=[pv.p_mpp_kw for pv in desk30.pvs])
    return desk30, inj


def test_voltage_table(quiet, tmp_path):
    model, inj = quiet
    sol = solve(model, inj)
    frame = read_csv(write_voltages(model, sol, tmp_path / "v" / "voltages.csv"))
    assert list(frame.columns) == VOLTAGE_COLUMNS
    assert len(frame) == 30
    assert frame["vmag_pu"].to_numpy() == pytest.approx(sol.v_mag_pu, abs=1e-8)
    assert frame.loc[0, "vang_deg"] == pytest.approx(0.0, abs=1e-9)
    assert frame.loc[1, "vang_deg"] == pytest.approx(-120.0, abs=1e-6)


def test_sensitivity_table(quiet, tmp_path):
    model, inj = quiet
    sm = build(model, inj)
    frame = read_csv(write_sensitivity(model, sm, tmp_path / "sensitivity.csv"))
    assert list(frame.columns) == ["node", "PV-E1", "PV-E2", "PV-E3"]
    assert frame["node"][0] == "src.A"
    assert frame["PV-E1"].to_numpy() == pytest.approx(sm.entries[:, 0], rel=1e-5, abs=1e-12)


def test_dispatch_tables(quiet, tmp_path):
    model, inj = quiet
    result = dispatch(model, inj)
    trace = read_csv(write_trace(result, tmp_path / "trace.csv"))
    assert list(trace.columns) == TRACE_COLUMNS
    assert trace["iteration"].tolist() == [0]
    table = read_csv(write_dispatch(model, result, tmp_path / "dispatch.csv"))
    assert list(table.columns) == DISPATCH_COLUMNS
    assert table["phases"].tolist() == ["A", "B", "ABC"]
    assert summary_lines(result)[0] == "status: Mitigated"


def test_mitigated_trace_ends_clean(desk30, tmp_path):
    model, inj, _ = far_overvoltage(desk30)
    result = dispatch(model, inj)
    trace = read_csv(write_trace(result, tmp_path / "trace.csv"))
    assert trace["violations"].iloc[-1] == 0
    assert trace["violations"].iloc[0] > 0
    assert trace["lp_status"].iloc[1] == "Optimal"
    zoned = dispatch_zoned(model, inj)
    frame = read_csv(write_zoned_comparison(model, zoned, result, tmp_path / "zoned.csv"))
    assert frame["difference_kvar"].to_numpy() == pytest.approx(zoned.q - result.final_state.q,
                                                                abs=1e-6)


def test_sweep_and_reports(tmp_path):
    rows = [SweepRow(10.0, "upf", 8, 12, 0, 1.03, 0.0), SweepRow(20.0, "upf", 8, 12, 2, 1.052, 0.0)]
    frame = read_csv(write_sweep(rows, tmp_path / "hc_sweep.csv"))
    assert list(frame.columns) == SWEEP_COLUMNS
    assert frame["violations"].tolist() == [0, 2]
    report = HcReport.from_levels("upf", "Far", 25.0, 10.0, 345.0, units=1,
                                  limiting=Limiting(8, 12, "t5.A", 1.052))
    path = write_hc_reports([report], tmp_path / "hc_report.json")
    doc = json.loads(path.read_text())
    assert isinstance(doc, list)
    assert doc[0]["hc_kw"] == 35.0
    assert doc[0]["limiting"]["node"] == "t5.A"
    assert np.isclose(doc[0]["hc_percent"], 100 * 35.0 / 345.0)
