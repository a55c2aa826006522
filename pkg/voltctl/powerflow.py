#!/usr/bin/env python3
"""Unbalanced radial power flow by backward/forward sweep.

The tree is compiled once per model into a path-coefficient matrix ``P``
(bus x line) holding the product of regulator ratios met between a line and
each downstream bus. With it the backward pass is ``J = P.T @ I`` and the
forward pass is ``V = g * Vs - P @ (Z J)``.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .errors import PowerFlowDiverged
from .feeder import PHASES, NetworkModel, PhaseNode, effective_q_max, node_index

logger = logging.getLogger(__name__)

_ROTATION = np.exp(-2j * np.pi / 3 * np.arange(3))


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-6
    max_iter: int = 100
    divergence_window: int = 5


@dataclass(frozen=True)
class VoltageLimits:
    """Loop-trigger thresholds (v_th_*) and guard-banded LP targets (v_pu_*)."""

    v_th_min: float = 0.95
    v_th_max: float = 1.05
    v_pu_min: float = 0.955
    v_pu_max: float = 1.045

    def __post_init__(self):
        if not self.v_th_min < 1.0 < self.v_th_max:
            raise ValueError(f"thresholds must bracket 1.0: {self.v_th_min}, {self.v_th_max}")
        if not (self.v_th_min < self.v_pu_min < self.v_pu_max < self.v_th_max):
            raise ValueError(
                "targets must sit strictly inside the thresholds: "
                f"{self.v_th_min} < {self.v_pu_min} < {self.v_pu_max} < {self.v_th_max}"
            )

    @classmethod
    def parse(cls, text: str) -> "VoltageLimits":
        """Build from ``"th_min,th_max"`` or ``"th_min,th_max,pu_min,pu_max"``."""
        values = [float(v) for v in text.split(",")]
        if len(values) == 2:
            guard = 0.005
            return cls(values[0], values[1], values[0] + guard, values[1] - guard)
        if len(values) == 4:
            return cls(*values)
        raise ValueError(f"expected 2 or 4 comma-separated limits, got {text!r}")


@dataclass(frozen=True, eq=False)
class InjectionState:
    """Per-element operating point: loads, PV output and capacitor states."""

    load_kw: np.ndarray
    load_kvar: np.ndarray
    pv_kw: np.ndarray
    pv_kvar: np.ndarray
    cap_on: np.ndarray

    @classmethod
    def idle(cls, model: NetworkModel) -> "InjectionState":
        return cls(
            load_kw=np.zeros(len(model.loads)),
            load_kvar=np.zeros(len(model.loads)),
            pv_kw=np.zeros(len(model.pvs)),
            pv_kvar=np.zeros(len(model.pvs)),
            cap_on=np.array([cap.on for cap in model.capacitors], dtype=bool),
        )

    def with_pv_kvar(self, q: np.ndarray) -> "InjectionState":
        return InjectionState(self.load_kw, self.load_kvar, self.pv_kw,
                              np.array(q, dtype=float), self.cap_on)


@dataclass(frozen=True, eq=False)
class VoltageSolution:
    v_complex: np.ndarray
    v_mag_pu: np.ndarray
    iterations: int
    converged: bool
    max_mismatch: float
    slack_kva: complex = 0j
    loss_kva: complex = 0j
    trace: Tuple[float, ...] = field(default=())


class ViolationCount(NamedTuple):
    over: int
    under: int
    worst_hi: float
    worst_lo: float

    @property
    def total(self) -> int:
        return self.over + self.under


class RadialNetwork:
    """Compiled, immutable sweep structures for one feeder."""

    def __init__(self, model: NetworkModel):
        self.model = model
        self.nodes: List[PhaseNode] = node_index(model)

        graph = nx.Graph()
        graph.add_nodes_from(model.bus_map)
        kinds = {}
        for line in model.lines:
            graph.add_edge(line.from_bus, line.to_bus, key=line.id)
            kinds[line.id] = ("line", line)
        for reg in model.regulators:
            graph.add_edge(reg.from_bus, reg.to_bus, key=reg.id)
            kinds[reg.id] = ("reg", reg)

        order = [model.slack_bus] + [child for _, child in nx.bfs_edges(graph, model.slack_bus)]
        self.bus_pos = {bus_id: k for k, bus_id in enumerate(order)}
        n_bus = len(order)
        n_line = len(model.lines)
        line_pos = {line.id: k for k, line in enumerate(model.lines)}

        self.path = np.zeros((n_bus, n_line))
        self.gain = np.ones(n_bus)
        self.z = np.zeros((n_line, 3, 3), dtype=complex)

        for parent, child in nx.bfs_edges(graph, model.slack_bus):
            edge_id = graph.edges[parent, child]["key"]
            kind, element = kinds[edge_id]
            p, c = self.bus_pos[parent], self.bus_pos[child]
            if kind == "reg":
                self.path[c] = element.tap_ratio * self.path[p]
                self.gain[c] = element.tap_ratio * self.gain[p]
            else:
                k = line_pos[edge_id]
                self.path[c] = self.path[p]
                self.path[c, k] = 1.0
                self.gain[c] = self.gain[p]
                slots = [PHASES.index(ph) for ph in element.phases]
                z_pu = element.z_matrix() / model.z_base(element.from_bus)
                self.z[k][np.ix_(slots, slots)] = z_pu

        self.flat = np.array(
            [self.bus_pos[n.bus_id] * 3 + PHASES.index(n.phase) for n in self.nodes]
        )
        self.n_bus = n_bus
        node_of = {(n.bus_id, n.phase): n.index for n in self.nodes}
        n_nodes = len(self.nodes)

        def incidence(elements) -> np.ndarray:
            m = np.zeros((n_nodes, len(elements)))
            for j, element in enumerate(elements):
                share = 1.0 / len(element.phases)
                for ph in element.phases:
                    m[node_of[(element.bus_id, ph)], j] = share
            return m

        self.load_map = incidence(model.loads)
        self.pv_map = incidence(model.pvs)
        self.cap_map = incidence(model.capacitors) * np.array(
            [len(c.phases) * c.kvar_per_phase for c in model.capacitors]
        )
        self.slack_nodes = np.array(
            [n.index for n in self.nodes if n.bus_id == model.slack_bus], dtype=int
        )
        self.v_source = model.slack_voltage_pu * _ROTATION

    @staticmethod
    @lru_cache(maxsize=32)
    def of(model: NetworkModel) -> "RadialNetwork":
        return RadialNetwork(model)

    def flat_start(self) -> np.ndarray:
        return (self.gain[:, None] * self.v_source[None, :]).reshape(-1)

    def demand(self, inj: InjectionState) -> Tuple[np.ndarray, np.ndarray]:
        """Constant-power consumption per node and capacitor rating, both p.u."""
        s_base = self.model.s_base_kva
        s = self.load_map @ (inj.load_kw + 1j * inj.load_kvar)
        s = s - self.pv_map @ (inj.pv_kw + 1j * inj.pv_kvar)
        qc = self.cap_map @ np.asarray(inj.cap_on, dtype=float)
        return s / s_base, qc / s_base

    def forward(self, i_nodes: np.ndarray) -> Tuple[np.ndarray, ...]:
        """Bus voltages (flat layout), line currents, line drops and bus currents."""
        i_bus = np.zeros(self.n_bus * 3, dtype=complex)
        i_bus[self.flat] = i_nodes
        i_bus = i_bus.reshape(self.n_bus, 3)
        j_line = self.path.T @ i_bus
        drops = np.einsum("lij,lj->li", self.z, j_line)
        v_bus = self.gain[:, None] * self.v_source[None, :] - self.path @ drops
        return v_bus.reshape(-1), j_line, drops, i_bus


def _consumption(s_const: np.ndarray, qc: np.ndarray, v: np.ndarray) -> np.ndarray:
    return s_const - 1j * qc * np.abs(v) ** 2


def solve(model: NetworkModel, inj: InjectionState,
          opts: Optional[SolverOptions] = None,
          initial: Optional[VoltageSolution] = None) -> VoltageSolution:
    """Backward/forward sweep; raises PowerFlowDiverged when it cannot converge."""
    opts = opts or SolverOptions()
    net = RadialNetwork.of(model)
    s_const, qc = net.demand(inj)

    if initial is not None and len(initial.v_complex) == len(net.nodes):
        v = np.asarray(initial.v_complex, dtype=complex).copy()
    else:
        v = net.flat_start()[net.flat]
    v[net.slack_nodes] = net.flat_start()[net.flat][net.slack_nodes]

    trace: List[float] = []
    rising = 0
    for iteration in range(1, opts.max_iter + 1):
        with np.errstate(all="ignore"):
            i_nodes = np.conj(_consumption(s_const, qc, v) / v)
            v_flat, j_line, drops, i_bus = net.forward(i_nodes)
            v_new = v_flat[net.flat]
            mismatch = np.abs(v_new * np.conj(i_nodes) - _consumption(s_const, qc, v_new))
        worst = float(np.max(mismatch)) if len(mismatch) else 0.0
        trace.append(worst)
        v = v_new
        if not math.isfinite(worst) or not np.all(np.isfinite(v)):
            raise PowerFlowDiverged("non-finite voltages", trace,
                                    _solution(v, iteration, False, worst, trace))
        if worst < opts.tolerance:
            s_base = model.s_base_kva
            slack_current = (net.gain[:, None] * i_bus).sum(axis=0)
            slack_kva = complex(np.sum(net.v_source * np.conj(slack_current))) * s_base
            loss_kva = complex(np.sum(drops * np.conj(j_line))) * s_base
            logger.debug("sweep converged in %d iterations (mismatch %.3g)", iteration, worst)
            return _solution(v, iteration, True, worst, trace, slack_kva, loss_kva)
        rising = rising + 1 if len(trace) > 1 and worst > trace[-2] else 0
        if rising >= opts.divergence_window:
            raise PowerFlowDiverged("mismatch increasing", trace,
                                    _solution(v, iteration, False, worst, trace))

    raise PowerFlowDiverged("iteration limit reached", trace,
                            _solution(v, opts.max_iter, False, trace[-1], trace))


def _solution(v, iterations, converged, mismatch, trace, slack_kva=0j, loss_kva=0j):
    v = np.array(v, dtype=complex)
    mags = np.abs(v)
    v.setflags(write=False)
    mags.setflags(write=False)
    return VoltageSolution(v, mags, iterations, converged, float(mismatch),
                           slack_kva, loss_kva, tuple(trace))


def count_violations(sol: VoltageSolution, limits: VoltageLimits,
                     nodes: Optional[Sequence[int]] = None) -> ViolationCount:
    """Over/under counts against the loop-trigger thresholds."""
    v = sol.v_mag_pu if nodes is None else sol.v_mag_pu[np.asarray(nodes, dtype=int)]
    if len(v) == 0:
        return ViolationCount(0, 0, float("nan"), float("nan"))
    return ViolationCount(
        over=int(np.count_nonzero(v > limits.v_th_max)),
        under=int(np.count_nonzero(v < limits.v_th_min)),
        worst_hi=float(np.max(v)),
        worst_lo=float(np.min(v)),
    )


def q_headroom(model: NetworkModel, inj: Optional[InjectionState] = None,
               actual: bool = False) -> np.ndarray:
    """Q_max per PV; with ``actual`` the instantaneous P replaces P_mpp."""
    if actual and inj is not None:
        return np.array([effective_q_max(pv, min(p, pv.s_rating_kva))
                         for pv, p in zip(model.pvs, inj.pv_kw)])
    return np.array([pv.q_max_kvar for pv in model.pvs])


def check_injection(model: NetworkModel, inj: InjectionState) -> List[str]:
    problems = []
    for pv, p, q in zip(model.pvs, inj.pv_kw, inj.pv_kvar):
        if abs(q) > pv.q_max_kvar + 1e-9:
            problems.append(f"{pv.id}: |Q|={abs(q):.4f} kVAr above {pv.q_max_kvar:.4f}")
        if p > pv.p_mpp_kw + 1e-9:
            problems.append(f"{pv.id}: P={p:.4f} kW above P_mpp {pv.p_mpp_kw:.4f}")
    return problems
