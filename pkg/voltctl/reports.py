#!/usr/bin/env python3
"""CSV and JSON writers for every tabular result."""
import json
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np
import pandas as pd

from .coordinator import DispatchResult, ZonedDispatch
from .feeder import NetworkModel, node_index
from .harness import HcReport, HcTableRow, HourlyRow, SweepRow, WorstCaseRow
from .powerflow import VoltageSolution
from .sensitivity import SensitivityMatrix

PathLike = Union[str, Path]

VOLTAGE_COLUMNS = ["bus", "phase", "vmag_pu", "vang_deg"]
TRACE_COLUMNS = ["iteration", "violations", "max_vpu", "min_vpu", "total_abs_q_kvar", "lp_status"]
DISPATCH_COLUMNS = ["pv", "bus", "phases", "p_kw", "q_initial_kvar", "q_kvar", "q_max_kvar"]
SWEEP_COLUMNS = ["level_kw", "mode", "month", "hour", "violations", "max_vpu", "total_q_kvar"]


def _write(frame: pd.DataFrame, path: PathLike, float_format: str = "%.9g") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=float_format, lineterminator="\n")
    return path


def voltage_frame(model: NetworkModel, sol: VoltageSolution) -> pd.DataFrame:
    nodes = node_index(model)
    return pd.DataFrame({
        "bus": [n.bus_id for n in nodes],
        "phase": [n.phase for n in nodes],
        "vmag_pu": sol.v_mag_pu,
        "vang_deg": np.degrees(np.angle(sol.v_complex)),
    }, columns=VOLTAGE_COLUMNS)


def write_voltages(model: NetworkModel, sol: VoltageSolution, path: PathLike) -> Path:
    return _write(voltage_frame(model, sol), path)


def write_sensitivity(model: NetworkModel, sm: SensitivityMatrix, path: PathLike) -> Path:
    nodes = node_index(model)
    frame = pd.DataFrame(sm.entries, columns=[model.pvs[j].id for j in sm.cols])
    frame.insert(0, "node", [nodes[i].label for i in sm.rows])
    return _write(frame, path, "%.6g")


def trace_frame(result: DispatchResult) -> pd.DataFrame:
    return pd.DataFrame([
        {"iteration": r.iteration, "violations": r.violations, "max_vpu": r.max_v,
         "min_vpu": r.min_v, "total_abs_q_kvar": r.total_abs_q, "lp_status": r.lp_status}
        for r in result.final_state.history
    ], columns=TRACE_COLUMNS)


def write_trace(result: DispatchResult, path: PathLike) -> Path:
    return _write(trace_frame(result), path)


def dispatch_frame(model: NetworkModel, result: DispatchResult) -> pd.DataFrame:
    state = result.final_state
    return pd.DataFrame({
        "pv": [pv.id for pv in model.pvs],
        "bus": [pv.bus_id for pv in model.pvs],
        "phases": ["".join(pv.phases) for pv in model.pvs],
        "p_kw": result.final_injection.pv_kw,
        "q_initial_kvar": state.q_initial,
        "q_kvar": state.q,
        "q_max_kvar": [pv.q_max_kvar for pv in model.pvs],
    }, columns=DISPATCH_COLUMNS)


def write_dispatch(model: NetworkModel, result: DispatchResult, path: PathLike) -> Path:
    return _write(dispatch_frame(model, result), path)


def write_zoned_comparison(model: NetworkModel, zoned: ZonedDispatch, full: DispatchResult,
                           path: PathLike) -> Path:
    """Per PV: the zoned and the full-network reactive set points side by side."""
    frame = pd.DataFrame({
        "pv": [pv.id for pv in model.pvs],
        "phases": ["".join(pv.phases) for pv in model.pvs],
        "q_zoned_kvar": zoned.q,
        "q_full_kvar": full.final_state.q,
    })
    frame["difference_kvar"] = frame["q_zoned_kvar"] - frame["q_full_kvar"]
    return _write(frame, path)


def write_sweep(rows: Iterable[SweepRow], path: PathLike) -> Path:
    return _write(pd.DataFrame([asdict(r) for r in rows], columns=SWEEP_COLUMNS), path)


def write_hc_reports(reports: Sequence[HcReport], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n")
    return path


def write_worst_case(rows: Iterable[WorstCaseRow], path: PathLike) -> Path:
    columns = ["month", "hour", "violations", "phase_a", "phase_b", "phase_c",
               "secondary", "pv_nodes", "max_v"]
    return _write(pd.DataFrame([asdict(r) for r in rows], columns=columns), path)


def write_hc_table(rows: Iterable[HcTableRow], path: PathLike) -> Path:
    columns = ["month", "placement", "mode", "added_kw", "status"]
    return _write(pd.DataFrame([asdict(r) for r in rows], columns=columns), path)


def write_hourly(rows: Iterable[HourlyRow], path: PathLike) -> Path:
    columns = ["hour", "mode", "violations", "max_v", "total_q"]
    return _write(pd.DataFrame([asdict(r) for r in rows], columns=columns), path)


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path)


def summary_lines(result: DispatchResult) -> List[str]:
    last = result.final_state.history[-1] if result.final_state.history else None
    lines = [f"status: {result.status.value}", f"iterations: {result.final_state.iteration}"]
    if last is not None:
        lines += [f"violations: {last.violations}", f"max V: {last.max_v:.4f} p.u.",
                  f"total |Q|: {last.total_abs_q:.2f} kVAr"]
    return lines
