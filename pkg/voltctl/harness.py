#!/usr/bin/env python3
"""Hosting-capacity protocol: placement, baseline tuning, PV sweeps and tables."""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .coordinator import CoordinatorOptions, dispatch, dispatch_zoned
from .errors import PowerFlowDiverged, VoltVarOscillation
from .feeder import PHASES, NetworkModel, PvSystem, effective_q_max, node_index
from .inverter import ControlMode, ModeKind, equilibrium_solve
from .powerflow import (InjectionState, SolverOptions, VoltageLimits, VoltageSolution,
                        count_violations, solve)
from .profiles import ProfileKind, ProfileLibrary, build_injection

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlacementSet:
    kind: str
    seed: int
    candidates: Tuple[str, ...]
    unit_kw: float = 10.0
    unit_pf_sizing: float = 0.9

    def units(self, model: NetworkModel, count: int, pv_profile_ids: Sequence[str]) -> List[PvSystem]:
        """The first ``count`` PV units; the candidate order wraps when exhausted."""
        if count and not self.candidates:
            raise ValueError(f"placement {self.kind} has no candidate loads")
        loads = {load.id: load for load in model.loads}
        s_rating = self.unit_kw / self.unit_pf_sizing
        units = []
        for k in range(count):
            load = loads[self.candidates[k % len(self.candidates)]]
            pick = int(np.random.default_rng([self.seed, k]).integers(len(pv_profile_ids)))
            unit = PvSystem(
                id=f"pv-add-{k + 1}",
                bus_id=load.bus_id,
                phases=load.phases,
                p_mpp_kw=self.unit_kw,
                s_rating_kva=s_rating,
                q_max_kvar=0.0,
                profile_id=pv_profile_ids[pick],
            )
            units.append(replace(unit, q_max_kvar=effective_q_max(unit)))
        return units


def build_placement(model: NetworkModel, kind: str, seed: int, unit_kw: float = 10.0,
                    unit_pf_sizing: float = 0.9) -> PlacementSet:
    """Loads in the zone (every load for ``All``) in a seeded random order."""
    loads = sorted(
        load.id for load in model.loads
        if kind == "All" or model.bus(load.bus_id).zone == kind
    )
    order = np.random.default_rng(seed).permutation(len(loads))
    return PlacementSet(kind, seed, tuple(loads[k] for k in order), unit_kw, unit_pf_sizing)


def add_pvs(model: NetworkModel, placement: PlacementSet, count: int,
            pv_profile_ids: Sequence[str]) -> NetworkModel:
    return model.with_pvs(placement.units(model, count, pv_profile_ids))


@dataclass(frozen=True)
class BaselineSettings:
    taps: Dict[str, float] = field(default_factory=dict)
    capacitors: Dict[str, bool] = field(default_factory=dict)
    violations: int = 0

    def apply(self, model: NetworkModel) -> NetworkModel:
        return model.with_settings(self.taps, self.capacitors)

    def to_dict(self) -> dict:
        return {"taps": dict(self.taps), "capacitors": dict(self.capacitors),
                "violations": self.violations}

    @classmethod
    def from_dict(cls, doc: dict) -> "BaselineSettings":
        return cls({k: float(v) for k, v in doc.get("taps", {}).items()},
                   {k: bool(v) for k, v in doc.get("capacitors", {}).items()},
                   int(doc.get("violations", 0)))


@dataclass
class Study:
    """Everything fixed across one hosting-capacity run besides the model and mode."""

    library: ProfileLibrary
    assignment: Dict[str, str]
    limits: VoltageLimits = field(default_factory=VoltageLimits)
    solver: Optional[SolverOptions] = None
    coordinator: CoordinatorOptions = field(default_factory=CoordinatorOptions)
    settings: Dict[int, BaselineSettings] = field(default_factory=dict)
    load_scale: float = 1.0

    def prepared(self, model: NetworkModel, month: int) -> NetworkModel:
        settings = self.settings.get(month)
        return settings.apply(model) if settings else model

    def injection(self, model: NetworkModel, month: int, hour: float) -> InjectionState:
        return build_injection(model, self.library, self.assignment, month, hour, self.load_scale)


@dataclass(frozen=True, eq=False)
class PointResult:
    month: int
    hour: float
    violations: int
    max_v: float
    total_q: float
    solution: Optional[VoltageSolution] = None
    cause: str = ""

    @property
    def failed(self) -> bool:
        return self.violations > 0 or bool(self.cause)


def evaluate(model: NetworkModel, mode: ControlMode, month: int, hour: float,
             study: Study) -> PointResult:
    """Operate the feeder at one instant under ``mode`` and count what is left over."""
    model = study.prepared(model, month)
    inj = study.injection(model, month, hour)
    try:
        if mode.is_local:
            sol, state = equilibrium_solve(model, inj, mode, study.solver)
            q = state.pv_kvar
        elif mode.kind == ModeKind.COORDINATED:
            result = dispatch(model, inj, study.limits, study.coordinator, study.solver)
            if result.final_solution is None or not result.final_solution.converged:
                return PointResult(month, hour, 0, float("nan"), 0.0, None, result.status.value)
            sol, q = result.final_solution, result.final_state.q
        else:
            zoned = dispatch_zoned(model, inj, study.limits, study.coordinator, study.solver)
            if zoned.residual is None:
                return PointResult(month, hour, 0, float("nan"), 0.0, None, "FlowDiverged")
            sol, q = zoned.validation, zoned.q
    except PowerFlowDiverged as exc:
        return PointResult(month, hour, 0, float("nan"), 0.0, None, f"FlowDiverged: {exc}")
    except VoltVarOscillation as exc:
        return PointResult(month, hour, 0, float("nan"), 0.0, None, f"VoltVarOscillation: {exc}")
    count = count_violations(sol, study.limits)
    return PointResult(month, hour, count.total, count.worst_hi, float(np.sum(np.abs(q))), sol)


@dataclass(frozen=True)
class Limiting:
    month: int
    hour: float
    node: str
    v_pu: float


@dataclass(frozen=True)
class HcReport:
    mode: str
    placement: str
    added_kw_at_first_violation: float
    hc_kw: float
    hc_percent: float
    limiting: Optional[Limiting] = None
    status: str = "violation"
    cause: str = ""
    units: int = 0

    @classmethod
    def from_levels(cls, mode: str, placement: str, existing_kw: float, added_kw: float,
                    peak_load_kw: float, **extra) -> "HcReport":
        hc_kw = existing_kw + added_kw
        return cls(mode, placement, added_kw, hc_kw, 100.0 * hc_kw / peak_load_kw, **extra)

    def to_dict(self) -> dict:
        doc = {
            "mode": self.mode,
            "placement": self.placement,
            "added_kw_at_first_violation": self.added_kw_at_first_violation,
            "hc_kw": self.hc_kw,
            "hc_percent": self.hc_percent,
            "status": self.status,
            "cause": self.cause,
            "units": self.units,
            "limiting": None,
        }
        if self.limiting:
            doc["limiting"] = {"month": self.limiting.month, "hour": self.limiting.hour,
                               "node": self.limiting.node, "v_pu": self.limiting.v_pu}
        return doc


@dataclass(frozen=True)
class SweepRow:
    level_kw: float
    mode: str
    month: int
    hour: float
    violations: int
    max_vpu: float
    total_q_kvar: float


def _limiting(model: NetworkModel, point: PointResult, limits: VoltageLimits) -> Optional[Limiting]:
    if point.solution is None:
        return None
    v = point.solution.v_mag_pu
    excess = np.maximum(v - limits.v_th_max, limits.v_th_min - v)
    worst = int(np.argmax(excess))
    return Limiting(point.month, point.hour, node_index(model)[worst].label, float(v[worst]))


def hc_sweep(model: NetworkModel, placement: PlacementSet, mode: ControlMode,
             grid: Iterable[Tuple[int, float]], study: Study,
             max_units: int = 200) -> Tuple[HcReport, List[SweepRow]]:
    """Add units one at a time until some grid point is left with a violation."""
    grid = list(grid)
    pv_ids = study.library.ids(ProfileKind.PV)
    rows: List[SweepRow] = []
    existing = model.pv_nameplate_kw
    peak = model.peak_load_kw

    def report(safe_units: int, **extra) -> HcReport:
        return HcReport.from_levels(mode.label, placement.kind, existing,
                                    safe_units * placement.unit_kw, peak,
                                    units=safe_units, **extra)

    for level in range(1, max_units + 1):
        feeder = add_pvs(model, placement, level, pv_ids)
        level_kw = level * placement.unit_kw
        for month, hour in grid:
            point = evaluate(feeder, mode, month, hour, study)
            rows.append(SweepRow(level_kw, mode.label, month, hour,
                                 point.violations, point.max_v, point.total_q))
            if point.failed:
                logger.info("%s/%s: first failure at %.1f kW (month %d hour %g)",
                            mode.label, placement.kind, level_kw, month, hour)
                status = "diverged" if point.cause else "violation"
                return report(level - 1, status=status, cause=point.cause,
                              limiting=_limiting(feeder, point, study.limits)), rows
        logger.debug("%s/%s: %.1f kW clean", mode.label, placement.kind, level_kw)
    return report(max_units, status="capped"), rows


def default_grid(months: Iterable[int], hours: Iterable[float]) -> List[Tuple[int, float]]:
    return [(m, h) for m in months for h in hours]


def tune_baseline(model: NetworkModel, library: ProfileLibrary, assignment: Dict[str, str],
                  month: int, limits: Optional[VoltageLimits] = None,
                  solver: Optional[SolverOptions] = None, hours: Iterable[float] = range(24),
                  load_scale: float = 1.0) -> BaselineSettings:
    """Greedy single-step search over taps and capacitor states for one month.

    Starts from neutral taps with every capacitor open and accepts a move only
    when it strictly lowers the summed violation count of the hourly flows.
    """
    limits = limits or VoltageLimits()
    hours = list(hours)
    n_nodes = len(node_index(model))

    def neutral(reg) -> int:
        lo, hi = reg.position_range
        return min(max(0, lo), hi)

    positions = {reg.id: neutral(reg) for reg in model.regulators}
    caps = {cap.id: False for cap in model.capacitors}
    regs = {reg.id: reg for reg in model.regulators}

    def settings(pos, on) -> BaselineSettings:
        return BaselineSettings({rid: regs[rid].at_position(k).tap_ratio for rid, k in pos.items()},
                                dict(on))

    def score(pos, on) -> int:
        tuned = settings(pos, on).apply(model)
        total = 0
        for hour in hours:
            inj = build_injection(tuned, library, assignment, month, hour, load_scale)
            inj = inj.with_pv_kvar(np.zeros(len(tuned.pvs)))
            try:
                total += count_violations(solve(tuned, inj, solver), limits).total
            except PowerFlowDiverged:
                total += n_nodes
        return total

    def tie_key(pos, on):
        return (sum(pos.values()), sum(on.values()))

    best = score(positions, caps)
    while best > 0:
        moves = []
        for rid, k in positions.items():
            lo, hi = regs[rid].position_range
            for step in (-1, 1):
                if lo <= k + step <= hi:
                    moves.append(({**positions, rid: k + step}, caps))
        for cid in caps:
            moves.append((positions, {**caps, cid: not caps[cid]}))
        scored = [(score(pos, on), tie_key(pos, on), n, pos, on)
                  for n, (pos, on) in enumerate(moves)]
        if not scored:
            break
        value, _, _, pos, on = min(scored, key=lambda item: item[:3])
        if value >= best:
            break
        best, positions, caps = value, pos, on
        logger.debug("baseline month %d: %d violations", month, best)

    result = settings(positions, caps)
    return BaselineSettings(result.taps, result.capacitors, best)


@dataclass(frozen=True)
class WorstCaseRow:
    month: int
    hour: float
    violations: int
    phase_a: int
    phase_b: int
    phase_c: int
    secondary: int
    pv_nodes: int
    max_v: float


def violation_breakdown(model: NetworkModel, sol: VoltageSolution,
                        limits: VoltageLimits) -> Dict[str, int]:
    nodes = node_index(model)
    v = sol.v_mag_pu
    bad = (v > limits.v_th_max) | (v < limits.v_th_min)
    pv_nodes = {(pv.bus_id, ph) for pv in model.pvs for ph in pv.phases}
    out = {ph: 0 for ph in PHASES}
    out["secondary"] = 0
    out["pv_nodes"] = 0
    for node in nodes:
        if not bad[node.index]:
            continue
        out[node.phase] += 1
        out["secondary"] += model.bus(node.bus_id).secondary
        out["pv_nodes"] += (node.bus_id, node.phase) in pv_nodes
    return out


def worst_case_table(model: NetworkModel, mode: ControlMode, grid: Iterable[Tuple[int, float]],
                     study: Study) -> List[WorstCaseRow]:
    """Per month, the hour with the most violating nodes (months without any are omitted)."""
    best: Dict[int, Tuple[int, float, PointResult]] = {}
    for month, hour in grid:
        point = evaluate(model, mode, month, hour, study)
        if point.solution is None or point.violations == 0:
            continue
        key = (point.violations, point.max_v)
        if month not in best or key > best[month][:2]:
            best[month] = (*key, point)
    rows = []
    for month in sorted(best):
        point = best[month][2]
        split = violation_breakdown(study.prepared(model, month), point.solution, study.limits)
        rows.append(WorstCaseRow(month, point.hour, point.violations, split["A"], split["B"],
                                 split["C"], split["secondary"], split["pv_nodes"], point.max_v))
    return rows


@dataclass(frozen=True)
class HcTableRow:
    month: int
    placement: str
    mode: str
    added_kw: float
    status: str


def hc_table(model: NetworkModel, kinds: Sequence[str], modes: Sequence[ControlMode],
             months: Sequence[int], hours: Sequence[float], seed: int, study: Study,
             unit_kw: float = 10.0, unit_pf_sizing: float = 0.9,
             max_units: int = 200) -> List[HcTableRow]:
    """PV additions before the first violation for every month, placement and mode."""
    rows = []
    for kind in kinds:
        placement = build_placement(model, kind, seed, unit_kw, unit_pf_sizing)
        for mode in modes:
            for month in months:
                report, _ = hc_sweep(model, placement, mode, default_grid([month], hours),
                                     study, max_units)
                rows.append(HcTableRow(month, kind, mode.label,
                                       report.added_kw_at_first_violation, report.status))
    return rows


def feeder_hc(rows: Sequence[HcTableRow], mode: str) -> float:
    """The lowest entry across months and placements limits the feeder."""
    values = [row.added_kw for row in rows if row.mode == mode]
    return min(values) if values else float("nan")


@dataclass(frozen=True)
class HourlyRow:
    hour: float
    mode: str
    violations: int
    max_v: float
    total_q: float


COMPARISON_MODES = ("UPF", "VV", "Optim R1", "Optim R2")


def hourly_comparison(model: NetworkModel, inj_by_hour: Dict[float, InjectionState],
                      limits: Optional[VoltageLimits] = None,
                      solver: Optional[SolverOptions] = None,
                      coordinator: Optional[CoordinatorOptions] = None,
                      vv: Optional[ControlMode] = None) -> List[HourlyRow]:
    """Per hour: UPF, volt-VAr and the first two coordinated iterations."""
    limits = limits or VoltageLimits()
    coordinator = coordinator or CoordinatorOptions()
    vv = vv or ControlMode(ModeKind.VOLT_VAR)
    rows = []
    for hour in sorted(inj_by_hour):
        inj = inj_by_hour[hour]
        for label, mode in (("UPF", ControlMode(ModeKind.UPF)), ("VV", vv)):
            try:
                sol, state = equilibrium_solve(model, inj, mode, solver)
            except (PowerFlowDiverged, VoltVarOscillation) as exc:
                logger.warning("hour %g %s failed: %s", hour, label, exc)
                rows.append(HourlyRow(hour, label, -1, float("nan"), float("nan")))
                continue
            count = count_violations(sol, limits)
            rows.append(HourlyRow(hour, label, count.total, count.worst_hi,
                                  float(np.sum(np.abs(state.pv_kvar)))))
        opts = CoordinatorOptions(max(2, coordinator.max_iterations), coordinator.delta_q,
                                  coordinator.objective, coordinator.q_headroom,
                                  coordinator.workers)
        history = dispatch(model, inj, limits, opts, solver).final_state.history
        for n, label in ((1, "Optim R1"), (2, "Optim R2")):
            records = [r for r in history if r.iteration <= n and r.lp_status in ("", "Optimal")]
            last = records[-1] if records else history[0]
            rows.append(HourlyRow(hour, label, last.violations, last.max_v, last.total_abs_q))
    return rows
