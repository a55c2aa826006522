#!/usr/bin/env python3
"""Voltage / reactive-power sensitivity matrix by per-inverter perturbation."""
import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import PerturbedFlowDiverged, PowerFlowDiverged
from .feeder import PHASES, NetworkModel, node_index
from .powerflow import InjectionState, SolverOptions, VoltageSolution, solve

logger = logging.getLogger(__name__)

DEFAULT_DELTA_Q = 1.0
RETRIES = 3


@dataclass(frozen=True, eq=False)
class SensitivityMatrix:
    """Entries in p.u. volts per kVAr absorbed; rows are phase nodes, columns PVs.

    Reactive changes elsewhere are injection-signed (absorption negative), so a
    change ``dq`` moves voltages by ``-entries @ dq`` and ``steps`` holds the
    injection-signed perturbation each column was measured with.

    ``rows`` and ``cols`` hold the node and PV indices of the full model the
    matrix refers to, so restrictions keep their provenance.
    """

    entries: np.ndarray
    base_voltages: np.ndarray
    base_q: np.ndarray
    delta_q: float
    steps: np.ndarray
    rows: Tuple[int, ...]
    cols: Tuple[int, ...]
    invalid_columns: Tuple[int, ...] = ()

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape

    def fingerprint(self) -> str:
        data = np.ascontiguousarray(self.entries, dtype=np.float64).tobytes()
        return hashlib.sha256(data).hexdigest()[:12]

    def restrict(self, rows: Sequence[int], cols: Sequence[int]) -> "SensitivityMatrix":
        """Sub-matrix by full-model node and PV indices."""
        r = [self.rows.index(i) for i in rows]
        c = [self.cols.index(j) for j in cols]
        return replace(
            self,
            entries=self.entries[np.ix_(r, c)],
            base_voltages=self.base_voltages[r],
            base_q=self.base_q[c],
            steps=self.steps[c],
            rows=tuple(rows),
            cols=tuple(cols),
            invalid_columns=tuple(j for j in self.invalid_columns if j in cols),
        )


def perturbation_sign(q: float, q_max: float) -> float:
    """Step away from the nearer reactive limit; a centred unit absorbs."""
    return 1.0 if (q_max - q) > (q + q_max) else -1.0


def build(model: NetworkModel, inj: InjectionState, delta_q: float = DEFAULT_DELTA_Q,
          opts: Optional[SolverOptions] = None, columns: Optional[Sequence[int]] = None,
          base: Optional[VoltageSolution] = None, workers: int = 1) -> SensitivityMatrix:
    if delta_q <= 0:
        raise ValueError(f"delta_q must be positive, got {delta_q}")
    base = base or solve(model, inj, opts)
    v0 = base.v_mag_pu
    q0 = np.asarray(inj.pv_kvar, dtype=float)
    m = len(model.pvs)
    columns = list(range(m)) if columns is None else sorted(columns)

    def column(j: int) -> Tuple[np.ndarray, float]:
        step = perturbation_sign(q0[j], model.pvs[j].q_max_kvar) * delta_q
        last: Optional[PowerFlowDiverged] = None
        for attempt in range(RETRIES + 1):
            q = q0.copy()
            q[j] += step
            try:
                sol = solve(model, inj.with_pv_kvar(q), opts, initial=base)
            except PowerFlowDiverged as exc:
                last = exc
                logger.warning("perturbing %s by %+.3g kVAr diverged, retrying at half step",
                               model.pvs[j].id, step)
                step /= 2.0
                continue
            return (sol.v_mag_pu - v0) / -step, step
        raise PerturbedFlowDiverged(j, last)

    def safe(j: int):
        try:
            return column(j)
        except PerturbedFlowDiverged as exc:
            logger.warning("%s; column zero-filled", exc)
            return None

    if workers > 1 and len(columns) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(safe, columns))
    else:
        results = [safe(j) for j in columns]

    entries = np.zeros((len(v0), m))
    steps = np.zeros(m)
    invalid = []
    for j, result in zip(columns, results):
        if result is None:
            invalid.append(j)
            continue
        entries[:, j], steps[j] = result

    return SensitivityMatrix(
        entries=entries,
        base_voltages=np.array(v0),
        base_q=q0.copy(),
        delta_q=float(delta_q),
        steps=steps,
        rows=tuple(range(len(v0))),
        cols=tuple(range(m)),
        invalid_columns=tuple(invalid),
    )


def predict(sm: SensitivityMatrix, delta_q_vec) -> np.ndarray:
    """Linear voltage change for injection-signed reactive changes in kVAr."""
    delta_q_vec = np.asarray(delta_q_vec, dtype=float)
    if delta_q_vec.shape != (sm.shape[1],):
        raise ValueError(f"expected {sm.shape[1]} reactive changes, got {delta_q_vec.shape}")
    return -(sm.entries @ delta_q_vec)


def phase_members(model: NetworkModel) -> Dict[str, Tuple[List[int], List[int]]]:
    """Per phase: the node indices on it and the single-phase PVs connected to it."""
    nodes = node_index(model)
    members = {}
    for ph in PHASES:
        rows = [n.index for n in nodes if n.phase == ph]
        cols = [pv.index for pv in model.pvs if pv.phases == (ph,)]
        members[ph] = (rows, cols)
    return members


def per_phase_submatrices(sm: SensitivityMatrix, model: NetworkModel) -> Dict[str, SensitivityMatrix]:
    """Same-phase restrictions; cross-phase entries and three-phase PVs are dropped."""
    return {ph: sm.restrict(rows, cols) for ph, (rows, cols) in phase_members(model).items()}


def cross_phase_mask(sm: SensitivityMatrix, model: NetworkModel) -> np.ndarray:
    nodes = node_index(model)
    mask = np.zeros(sm.shape, dtype=bool)
    for c, j in enumerate(sm.cols):
        pv_phases = model.pvs[j].phases
        for r, i in enumerate(sm.rows):
            mask[r, c] = nodes[i].phase not in pv_phases
    return mask


def in_phase_dominance(sm: SensitivityMatrix, model: NetworkModel) -> List[int]:
    """PV indices whose own-PCC entry is smaller than some cross-phase entry."""
    node_of = {(n.bus_id, n.phase): n.index for n in node_index(model)}
    mask = cross_phase_mask(sm, model)
    breaches = []
    for c, j in enumerate(sm.cols):
        pv = model.pvs[j]
        own = [sm.rows.index(node_of[(pv.bus_id, ph)]) for ph in pv.phases
               if node_of[(pv.bus_id, ph)] in sm.rows]
        cross = np.abs(sm.entries[mask[:, c], c])
        if own and len(cross) and np.min(np.abs(sm.entries[own, c])) < np.max(cross):
            breaches.append(j)
    if breaches:
        logger.warning("in-phase dominance breached for %d PV columns", len(breaches))
    return breaches
