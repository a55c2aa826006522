#!/usr/bin/env python3
"""Local inverter control: unity power factor, fixed power factor and volt-VAr."""
import logging
import math
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .errors import VoltVarOscillation
from .feeder import NetworkModel, node_index
from .powerflow import InjectionState, SolverOptions, VoltageSolution, solve

logger = logging.getLogger(__name__)

DAMPING = 0.5
MAX_CYCLES = 50
CONSISTENCY_KVAR = 0.01


@dataclass(frozen=True)
class VoltVarCurve:
    v1: float = 0.92
    v2: float = 0.98
    v3: float = 1.02
    v4: float = 1.08
    q1: float = 0.44
    q4: float = -0.44

    def __post_init__(self):
        if not (self.v1 < self.v2 <= self.v3 < self.v4):
            raise ValueError(f"volt-VAr breakpoints out of order: {self.v1}, {self.v2}, {self.v3}, {self.v4}")
        if not (self.q1 >= 0 >= self.q4):
            raise ValueError(f"volt-VAr needs q1 >= 0 >= q4, got {self.q1}, {self.q4}")

    @classmethod
    def from_dict(cls, doc: Optional[dict]) -> "VoltVarCurve":
        doc = doc or {}
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown volt-VAr keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in doc.items()})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class ModeKind(str, Enum):
    UPF = "upf"
    FIXED_PF = "fixed_pf"
    VOLT_VAR = "volt_var"
    COORDINATED = "coordinated"
    ZONED = "zoned"


_ALIASES = {"vv": ModeKind.VOLT_VAR, "pf": ModeKind.FIXED_PF, "optim": ModeKind.COORDINATED}


@dataclass(frozen=True)
class ControlMode:
    kind: ModeKind = ModeKind.UPF
    pf: float = 0.95
    absorbing: bool = True
    curve: VoltVarCurve = field(default_factory=VoltVarCurve)

    @classmethod
    def parse(cls, text: str, curve: Optional[VoltVarCurve] = None) -> "ControlMode":
        """Accepts ``upf``, ``vv``, ``volt_var``, ``fixed_pf:0.95``, ``coordinated``, ``zoned``."""
        name, _, arg = text.strip().lower().partition(":")
        kind = _ALIASES.get(name) or ModeKind(name)
        pf = float(arg) if arg else 0.95
        if kind == ModeKind.FIXED_PF and not 0 < pf <= 1:
            raise ValueError(f"power factor must be in (0, 1], got {pf}")
        return cls(kind=kind, pf=pf, curve=curve or VoltVarCurve())

    @property
    def label(self) -> str:
        if self.kind == ModeKind.FIXED_PF:
            return f"fixed_pf:{self.pf:g}"
        return self.kind.value

    @property
    def is_local(self) -> bool:
        return self.kind in (ModeKind.UPF, ModeKind.FIXED_PF, ModeKind.VOLT_VAR)


def vv_q(curve: VoltVarCurve, v_pcc, s_rating):
    """Reactive power in kVAr from the volt-VAr curve; works element-wise on arrays."""
    xp = [curve.v1, curve.v2, curve.v3, curve.v4]
    fp = [curve.q1, 0.0, 0.0, curve.q4]
    q = np.interp(v_pcc, xp, fp) * np.asarray(s_rating, dtype=float)
    return float(q) if np.ndim(q) == 0 else q


def pcc_map(model: NetworkModel) -> np.ndarray:
    """M x N averaging matrix from node magnitudes to each PV's PCC voltage."""
    node_of = {(n.bus_id, n.phase): n.index for n in node_index(model)}
    m = np.zeros((len(model.pvs), len(node_of)))
    for j, pv in enumerate(model.pvs):
        for ph in pv.phases:
            m[j, node_of[(pv.bus_id, ph)]] = 1.0 / len(pv.phases)
    return m


def fixed_pf_q(model: NetworkModel, inj: InjectionState, pf: float, absorbing: bool = True) -> np.ndarray:
    sign = -1.0 if absorbing else 1.0
    q_max = np.array([pv.q_max_kvar for pv in model.pvs])
    q = sign * inj.pv_kw * math.tan(math.acos(pf))
    return np.clip(q, -q_max, q_max)


def equilibrium_solve(model: NetworkModel, inj: InjectionState, mode: ControlMode,
                      opts: Optional[SolverOptions] = None,
                      damping: float = DAMPING, max_cycles: int = MAX_CYCLES,
                      tolerance: float = CONSISTENCY_KVAR) -> Tuple[VoltageSolution, InjectionState]:
    """Solve the feeder with every inverter following a local control law."""
    if mode.kind == ModeKind.UPF:
        state = inj.with_pv_kvar(np.zeros(len(model.pvs)))
        return solve(model, state, opts), state
    if mode.kind == ModeKind.FIXED_PF:
        state = inj.with_pv_kvar(fixed_pf_q(model, inj, mode.pf, mode.absorbing))
        return solve(model, state, opts), state
    if mode.kind != ModeKind.VOLT_VAR:
        raise ValueError(f"{mode.label} is not a local control mode")

    pcc = pcc_map(model)
    s_rating = np.array([pv.s_rating_kva for pv in model.pvs])
    q_max = np.array([pv.q_max_kvar for pv in model.pvs])
    q = np.zeros(len(model.pvs))
    sol = None
    delta = 0.0
    for cycle in range(1, max_cycles + 1):
        state = inj.with_pv_kvar(q)
        sol = solve(model, state, opts, initial=sol)
        target = np.clip(vv_q(mode.curve, pcc @ sol.v_mag_pu, s_rating), -q_max, q_max)
        step = target - q
        delta = float(np.max(np.abs(step))) if len(step) else 0.0
        if delta < tolerance:
            logger.debug("volt-VAr settled after %d cycles", cycle)
            return sol, state
        q = q + damping * step
    logger.warning("volt-VAr did not settle in %d cycles (max dQ %.4f kVAr)", max_cycles, delta)
    raise VoltVarOscillation(max_cycles, delta)
