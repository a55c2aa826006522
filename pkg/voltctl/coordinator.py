#!/usr/bin/env python3
"""Coordinated reactive-power dispatch.

Each iteration linearises the feeder around the present operating point,
asks the LP for the smallest reactive intervention that pulls every node
inside the guard-banded targets, applies it, and re-checks with a full
power flow. Active power is never touched.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NumericalBreakdown, PowerFlowDiverged
from .feeder import NetworkModel, node_index
from .lp import Constraint, LinearProgram, LpStatus, solve_lp
from .powerflow import (InjectionState, SolverOptions, ViolationCount, VoltageLimits,
                        VoltageSolution, count_violations, q_headroom, solve)
from .sensitivity import SensitivityMatrix, build, phase_members

logger = logging.getLogger(__name__)

OBJECTIVES = ("l1", "literal")
HEADROOMS = ("rated", "actual")


@dataclass(frozen=True)
class CoordinatorOptions:
    max_iterations: int = 3
    delta_q: float = 1.0
    objective: str = "l1"
    q_headroom: str = "rated"
    workers: int = 1

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.delta_q <= 0:
            raise ValueError("delta_q must be positive")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.q_headroom not in HEADROOMS:
            raise ValueError(f"q_headroom must be one of {HEADROOMS}")


class DispatchStatus(str, Enum):
    MITIGATED = "Mitigated"
    LP_INFEASIBLE = "LpInfeasible"
    ITERATION_LIMIT = "IterationLimit"
    FLOW_DIVERGED = "FlowDiverged"


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    violations: int
    max_v: float
    min_v: float
    total_abs_q: float
    fingerprint: str = ""
    lp_status: str = ""


@dataclass
class DispatchState:
    q: np.ndarray
    q_initial: np.ndarray
    iteration: int = 0
    history: List[IterationRecord] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class DispatchResult:
    status: DispatchStatus
    final_state: DispatchState
    final_solution: Optional[VoltageSolution]
    final_injection: InjectionState
    matrices: Tuple[SensitivityMatrix, ...] = ()

    @property
    def mitigated(self) -> bool:
        return self.status == DispatchStatus.MITIGATED


@dataclass(frozen=True, eq=False)
class ZonedDispatch:
    per_phase: Dict[str, DispatchResult]
    q: np.ndarray
    validation: Optional[VoltageSolution]
    residual: Optional[ViolationCount]

    @property
    def mitigated(self) -> bool:
        return self.residual is not None and self.residual.total == 0


def assemble_lp(sm: SensitivityMatrix, v: np.ndarray, q: np.ndarray, q_max: np.ndarray,
                limits: VoltageLimits, objective: str = "l1") -> LinearProgram:
    """Variables are dQ (M) followed, for the L1 objective, by t (M) with t >= |q + dQ|.

    ``q`` and dQ are injection-signed while ``sm`` is per kVAr absorbed, so the
    voltage rows carry ``-sm``.
    """
    v = np.asarray(v, dtype=float)
    q = np.asarray(q, dtype=float)
    q_max = np.asarray(q_max, dtype=float)
    m = len(q)
    bounds = [(float(-qm - qj), float(qm - qj)) for qj, qm in zip(q, q_max)]
    constraints: List[Constraint] = []

    if objective == "l1":
        width = 2 * m
        cost = np.concatenate([np.zeros(m), np.ones(m)])
        bounds += [(0.0, np.inf)] * m
        for j in range(m):
            above = np.zeros(width)
            above[m + j], above[j] = 1.0, -1.0
            constraints.append(Constraint(above, ">=", q[j]))
            below = np.zeros(width)
            below[m + j], below[j] = 1.0, 1.0
            constraints.append(Constraint(below, ">=", -q[j]))
    elif objective == "literal":
        width = m
        cost = np.ones(m)
    else:
        raise ValueError(f"unknown objective {objective!r}")

    for i, row in enumerate(sm.entries):
        coefs = np.zeros(width)
        coefs[:m] = -row
        constraints.append(Constraint(coefs, "<=", limits.v_pu_max - v[i]))
        constraints.append(Constraint(coefs, ">=", limits.v_pu_min - v[i]))
    return LinearProgram(cost, constraints, bounds)


def _record(iteration: int, sol: VoltageSolution, q: np.ndarray, limits: VoltageLimits,
            rows: Sequence[int], fingerprint: str = "", lp_status: str = "") -> IterationRecord:
    count = count_violations(sol, limits, rows)
    return IterationRecord(iteration, count.total, count.worst_hi, count.worst_lo,
                           float(np.sum(np.abs(q))), fingerprint, lp_status)


def _run(model: NetworkModel, inj: InjectionState, limits: VoltageLimits,
         opts: CoordinatorOptions, solver: Optional[SolverOptions],
         rows: Sequence[int], cols: Sequence[int]) -> DispatchResult:
    """Iterative dispatch seeing only ``rows`` nodes and moving only ``cols`` PVs."""
    rows, cols = list(rows), list(cols)
    q0 = np.array(inj.pv_kvar, dtype=float)
    q_max = q_headroom(model, inj, actual=opts.q_headroom == "actual")
    state = DispatchState(q=q0.copy(), q_initial=q0.copy())
    matrices: List[SensitivityMatrix] = []
    current = inj

    def finish(status, sol):
        logger.info("dispatch finished: %s after %d iterations", status.value, state.iteration)
        return DispatchResult(status, state, sol, current, tuple(matrices))

    try:
        sol = solve(model, current, solver)
    except PowerFlowDiverged as exc:
        return finish(DispatchStatus.FLOW_DIVERGED, exc.solution)
    state.history.append(_record(0, sol, state.q, limits, rows))

    while count_violations(sol, limits, rows).total > 0:
        if state.iteration >= opts.max_iterations:
            return finish(DispatchStatus.ITERATION_LIMIT, sol)
        full = build(model, current, opts.delta_q, solver, columns=cols, base=sol,
                     workers=opts.workers)
        sm = full.restrict(rows, cols)
        matrices.append(full)
        lp = assemble_lp(sm, sol.v_mag_pu[rows], state.q[cols], q_max[cols], limits,
                         opts.objective)
        try:
            outcome = solve_lp(lp)
            lp_status = outcome.status.value
        except NumericalBreakdown as exc:
            logger.warning("LP broke down: %s", exc)
            outcome, lp_status = None, "NumericalBreakdown"
        logger.debug("iteration %d: LP %s", state.iteration + 1, lp_status)
        if outcome is None or outcome.status != LpStatus.OPTIMAL:
            state.history.append(IterationRecord(
                state.iteration + 1, state.history[-1].violations, state.history[-1].max_v,
                state.history[-1].min_v, state.history[-1].total_abs_q, sm.fingerprint(), lp_status))
            return finish(DispatchStatus.LP_INFEASIBLE, sol)

        q_new = state.q.copy()
        q_new[cols] = np.clip(state.q[cols] + outcome.x[:len(cols)], -q_max[cols], q_max[cols])
        state.q = q_new
        state.iteration += 1
        current = inj.with_pv_kvar(q_new)
        try:
            sol = solve(model, current, solver, initial=sol)
        except PowerFlowDiverged as exc:
            return finish(DispatchStatus.FLOW_DIVERGED, exc.solution)
        state.history.append(_record(state.iteration, sol, q_new, limits, rows,
                                     sm.fingerprint(), lp_status))

    return finish(DispatchStatus.MITIGATED, sol)


def dispatch(model: NetworkModel, inj: InjectionState, limits: Optional[VoltageLimits] = None,
             opts: Optional[CoordinatorOptions] = None,
             solver: Optional[SolverOptions] = None) -> DispatchResult:
    limits = limits or VoltageLimits()
    opts = opts or CoordinatorOptions()
    n_nodes = len(node_index(model))
    return _run(model, inj, limits, opts, solver, range(n_nodes), range(len(model.pvs)))


def dispatch_zoned(model: NetworkModel, inj: InjectionState, limits: Optional[VoltageLimits] = None,
                   opts: Optional[CoordinatorOptions] = None,
                   solver: Optional[SolverOptions] = None) -> ZonedDispatch:
    """Per-phase dispatch blind to cross-phase coupling, then one validation flow."""
    limits = limits or VoltageLimits()
    opts = opts or CoordinatorOptions()
    per_phase: Dict[str, DispatchResult] = {}
    q = np.array(inj.pv_kvar, dtype=float)
    for phase, (rows, cols) in phase_members(model).items():
        result = _run(model, inj, limits, opts, solver, rows, cols)
        per_phase[phase] = result
        q[cols] = result.final_state.q[cols]

    try:
        validation = solve(model, inj.with_pv_kvar(q), solver)
    except PowerFlowDiverged as exc:
        logger.warning("zoned validation flow diverged: %s", exc)
        return ZonedDispatch(per_phase, q, exc.solution, None)
    residual = count_violations(validation, limits)
    logger.info("zoned validation: %d residual violations", residual.total)
    return ZonedDispatch(per_phase, q, validation, residual)

