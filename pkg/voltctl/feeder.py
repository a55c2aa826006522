#!/usr/bin/env python3
"""Immutable model of an unbalanced radial feeder and its equipment.

Impedances are stored in ohms with the neutral already Kron-reduced into the
phase matrix, so cross-phase coupling lives entirely in the mutual terms.
Per-unit values are taken on each bus's own line-to-neutral ``base_kv`` and
the per-phase ``s_base_kva`` of the model.
"""
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import networkx as nx
import numpy as np

from .errors import ParseError, QmaxDomainError

PHASES = ("A", "B", "C")
ZONES = ("Near", "Far")
DEFAULT_TAP_STEP = 0.00625


@dataclass(frozen=True)
class Bus:
    id: str
    phases: Tuple[str, ...]
    base_kv: float
    zone: str = "Near"
    secondary: bool = False


@dataclass(frozen=True)
class PhaseNode:
    bus_id: str
    phase: str
    index: int

    @property
    def label(self) -> str:
        return f"{self.bus_id}.{self.phase}"


@dataclass(frozen=True)
class LineSegment:
    id: str
    from_bus: str
    to_bus: str
    phases: Tuple[str, ...]
    z_ohm: Tuple[Tuple[complex, ...], ...]

    def z_matrix(self) -> np.ndarray:
        return np.array(self.z_ohm, dtype=complex)


@dataclass(frozen=True)
class Regulator:
    id: str
    from_bus: str
    to_bus: str
    phases: Tuple[str, ...]
    tap_ratio: float = 1.0
    tap_step: float = DEFAULT_TAP_STEP
    tap_range: Tuple[float, float] = (0.9, 1.1)

    @property
    def tap_position(self) -> int:
        return int(round((self.tap_ratio - 1.0) / self.tap_step))

    @property
    def position_range(self) -> Tuple[int, int]:
        lo = math.ceil((self.tap_range[0] - 1.0) / self.tap_step - 1e-9)
        hi = math.floor((self.tap_range[1] - 1.0) / self.tap_step + 1e-9)
        return lo, hi

    def at_position(self, position: int) -> "Regulator":
        return replace(self, tap_ratio=1.0 + position * self.tap_step)


@dataclass(frozen=True)
class CapacitorBank:
    id: str
    bus_id: str
    phases: Tuple[str, ...]
    kvar_per_phase: float
    on: bool = True


@dataclass(frozen=True)
class LoadPoint:
    id: str
    bus_id: str
    phases: Tuple[str, ...]
    kw_peak: float
    pf: float = 0.95
    profile_id: str = "load-1"


@dataclass(frozen=True)
class PvSystem:
    id: str
    bus_id: str
    phases: Tuple[str, ...]
    p_mpp_kw: float
    s_rating_kva: float
    q_max_kvar: float
    profile_id: str = "pv-1"
    index: int = 0


@dataclass(frozen=True)
class Violation:
    code: str
    element: str
    message: str


@dataclass(frozen=True)
class NetworkModel:
    buses: Tuple[Bus, ...]
    lines: Tuple[LineSegment, ...]
    regulators: Tuple[Regulator, ...]
    capacitors: Tuple[CapacitorBank, ...]
    loads: Tuple[LoadPoint, ...]
    pvs: Tuple[PvSystem, ...]
    slack_bus: str
    slack_voltage_pu: float = 1.0
    s_base_kva: float = 100.0
    name: str = field(default="feeder", compare=False)

    @cached_property
    def bus_map(self) -> Dict[str, Bus]:
        return {bus.id: bus for bus in self.buses}

    def bus(self, bus_id: str) -> Bus:
        return self.bus_map[bus_id]

    def z_base(self, bus_id: str) -> float:
        """Per-phase impedance base in ohms for a bus."""
        return self.bus(bus_id).base_kv ** 2 * 1000.0 / self.s_base_kva

    @property
    def peak_load_kw(self) -> float:
        return float(sum(load.kw_peak for load in self.loads))

    @property
    def pv_nameplate_kw(self) -> float:
        return float(sum(pv.p_mpp_kw for pv in self.pvs))

    def edges(self) -> Iterator[Tuple[str, str, str, Tuple[str, ...]]]:
        """Yield (id, from_bus, to_bus, phases) for every line and regulator."""
        for line in self.lines:
            yield line.id, line.from_bus, line.to_bus, line.phases
        for reg in self.regulators:
            yield reg.id, reg.from_bus, reg.to_bus, reg.phases

    def with_pvs(self, extra: List[PvSystem]) -> "NetworkModel":
        start = len(self.pvs)
        added = tuple(replace(pv, index=start + k) for k, pv in enumerate(extra))
        return replace(self, pvs=self.pvs + added)

    def with_settings(self, taps: Optional[Dict[str, float]] = None,
                      capacitors: Optional[Dict[str, bool]] = None) -> "NetworkModel":
        """Copy with regulator taps and capacitor states overridden."""
        taps = taps or {}
        capacitors = capacitors or {}
        regs = tuple(
            replace(reg, tap_ratio=taps[reg.id]) if reg.id in taps else reg
            for reg in self.regulators
        )
        caps = tuple(
            replace(cap, on=capacitors[cap.id]) if cap.id in capacitors else cap
            for cap in self.capacitors
        )
        return replace(self, regulators=regs, capacitors=caps)


def effective_q_max(pv: PvSystem, p_kw: Optional[float] = None) -> float:
    """Reactive headroom sqrt(S^2 - P^2) in kVAr.

    With ``p_kw`` given, the instantaneous output replaces P_mpp.
    """
    p = pv.p_mpp_kw if p_kw is None else p_kw
    s = pv.s_rating_kva
    if s < p:
        raise QmaxDomainError(f"PV {pv.id}: S={s} kVA below P={p} kW")
    return math.sqrt(s * s - p * p)


def node_index(model: NetworkModel) -> List[PhaseNode]:
    """Phase nodes ordered by bus id, then phase A<B<C."""
    pairs = sorted(
        ((bus.id, phase) for bus in model.buses for phase in bus.phases),
        key=lambda item: (item[0], PHASES.index(item[1])),
    )
    return [PhaseNode(bus_id, phase, k) for k, (bus_id, phase) in enumerate(pairs)]


def _check_phases(out: List[Violation], element: str, phases, bus: Optional[Bus],
                  sizes=(1, 2, 3)):
    if not phases:
        out.append(Violation("EmptyPhases", element, "no phases declared"))
        return
    if len(set(phases)) != len(phases) or any(p not in PHASES for p in phases):
        out.append(Violation("UnknownPhase", element, f"bad phase list {phases}"))
        return
    if len(phases) not in sizes:
        out.append(Violation("BadPhaseCount", element,
                             f"{len(phases)} phases, expected one of {sizes}"))
    _check_subset(out, element, phases, bus)


def _check_subset(out: List[Violation], element: str, phases, bus: Optional[Bus]):
    if bus is not None and not set(phases) <= set(bus.phases):
        out.append(Violation("PhaseMismatch", element,
                             f"phases {phases} not all present at bus {bus.id}"))


def _check_topology(model: NetworkModel, out: List[Violation]):
    graph = nx.MultiGraph()
    graph.add_nodes_from(model.bus_map)
    edge_count = 0
    for edge_id, a, b, _ in model.edges():
        if a in model.bus_map and b in model.bus_map:
            graph.add_edge(a, b, key=edge_id)
            edge_count += 1
    if edge_count != len(model.buses) - 1:
        out.append(Violation(
            "NonRadialTopology", model.name,
            f"{edge_count} edges for {len(model.buses)} buses"))
    connected = len(model.buses) > 0 and nx.is_connected(graph)
    if not connected:
        out.append(Violation("Disconnected", model.name,
                             "not every bus is reachable from the slack"))
    if out or model.slack_bus not in model.bus_map:
        return

    phases_of = {edge_id: phases for edge_id, _, _, phases in model.edges()}
    for parent, child in nx.bfs_edges(graph, model.slack_bus):
        key = next(iter(graph.get_edge_data(parent, child)))
        missing = set(model.bus(child).phases) - set(phases_of[key])
        if missing:
            out.append(Violation(
                "UnservedPhase", child,
                f"phases {sorted(missing)} are not fed through {key}"))


def validate(model: NetworkModel) -> List[Violation]:
    """Every invariant breach of the model; empty when usable by the power flow."""
    out: List[Violation] = []

    seen = set()
    for bus in model.buses:
        if bus.id in seen:
            out.append(Violation("DuplicateBusId", bus.id, "bus id repeated"))
        seen.add(bus.id)
        _check_phases(out, bus.id, bus.phases, None)
        if not bus.base_kv > 0:
            out.append(Violation("NonPositiveBaseKv", bus.id, f"base_kv={bus.base_kv}"))
        if bus.zone not in ZONES:
            out.append(Violation("UnknownZone", bus.id, f"zone {bus.zone!r}"))

    if model.slack_bus not in model.bus_map:
        out.append(Violation("UnknownSlack", model.slack_bus, "slack bus not declared"))

    groups = (model.lines, model.regulators, model.capacitors, model.loads, model.pvs)
    for group in groups:
        ids = [item.id for item in group]
        for dup in sorted({i for i in ids if ids.count(i) > 1}):
            out.append(Violation("DuplicateId", dup, "element id repeated"))

    def lookup(element: str, bus_id: str) -> Optional[Bus]:
        if bus_id not in model.bus_map:
            out.append(Violation("UnknownBus", element, f"bus {bus_id!r} not declared"))
            return None
        return model.bus(bus_id)

    for line in model.lines:
        a = lookup(line.id, line.from_bus)
        b = lookup(line.id, line.to_bus)
        _check_phases(out, line.id, line.phases, a)
        _check_subset(out, line.id, line.phases, b)
        if a is not None and b is not None and not math.isclose(a.base_kv, b.base_kv):
            out.append(Violation("BaseKvMismatch", line.id,
                                 f"{a.id}={a.base_kv} kV vs {b.id}={b.base_kv} kV"))
        z = line.z_matrix()
        n = len(line.phases)
        if z.shape != (n, n):
            out.append(Violation("ZMatrixShape", line.id,
                                 f"shape {z.shape} for {n} phases"))
            continue
        if np.any(np.diag(z).real <= 0):
            out.append(Violation("NonPositiveResistance", line.id,
                                 "diagonal resistance must be positive"))
        if not np.allclose(z, z.T, rtol=0.0, atol=1e-12):
            out.append(Violation("ZMatrixAsymmetric", line.id, "z_matrix not symmetric"))

    for reg in model.regulators:
        a = lookup(reg.id, reg.from_bus)
        b = lookup(reg.id, reg.to_bus)
        _check_phases(out, reg.id, reg.phases, a)
        _check_subset(out, reg.id, reg.phases, b)
        lo, hi = reg.tap_range
        if not lo - 1e-12 <= reg.tap_ratio <= hi + 1e-12:
            out.append(Violation("TapOutOfRange", reg.id,
                                 f"tap {reg.tap_ratio} outside [{lo}, {hi}]"))
        steps = (reg.tap_ratio - 1.0) / reg.tap_step
        if abs(steps - round(steps)) > 1e-6:
            out.append(Violation("TapOffStep", reg.id,
                                 f"tap {reg.tap_ratio} is not 1 + k*{reg.tap_step}"))

    for cap in model.capacitors:
        _check_phases(out, cap.id, cap.phases, lookup(cap.id, cap.bus_id))
        if cap.kvar_per_phase < 0:
            out.append(Violation("NegativeKvar", cap.id, f"{cap.kvar_per_phase} kVAr"))

    for load in model.loads:
        _check_phases(out, load.id, load.phases, lookup(load.id, load.bus_id), (1, 3))
        if load.kw_peak < 0:
            out.append(Violation("NegativeLoad", load.id, f"{load.kw_peak} kW"))
        if not 0 < load.pf <= 1:
            out.append(Violation("BadPowerFactor", load.id, f"pf={load.pf}"))

    for k, pv in enumerate(model.pvs):
        _check_phases(out, pv.id, pv.phases, lookup(pv.id, pv.bus_id), (1, 3))
        if pv.index != k:
            out.append(Violation("PvIndexInvalid", pv.id, f"index {pv.index}, expected {k}"))
        try:
            expected = effective_q_max(pv)
        except QmaxDomainError:
            out.append(Violation("SRatingBelowPmpp", pv.id,
                                 f"S={pv.s_rating_kva} kVA < P={pv.p_mpp_kw} kW"))
            continue
        if abs(pv.q_max_kvar - expected) > 1e-9 * max(1.0, expected):
            out.append(Violation("QmaxInconsistent", pv.id,
                                 f"q_max {pv.q_max_kvar} != sqrt(S^2-P^2) = {expected:.6f}"))

    if not any(v.code in ("UnknownBus", "DuplicateBusId") for v in out):
        _check_topology(model, out)
    return out


def _phases(value, key: str, path) -> Tuple[str, ...]:
    if isinstance(value, str):
        value = list(value)
    if not isinstance(value, list):
        raise ParseError(path, "expected a phase list such as [\"A\", \"B\"]", key=key)
    return tuple(str(p) for p in value)


def _z_matrix(value, key: str, path) -> Tuple[Tuple[complex, ...], ...]:
    try:
        return tuple(tuple(complex(float(r), float(x)) for r, x in row) for row in value)
    except (TypeError, ValueError):
        raise ParseError(path, "impedance must be [[ [r, x], ... ], ...] in ohms", key=key)


class FeederFile:
    """Reads and writes the JSON feeder description."""

    @staticmethod
    def load(path: Union[str, Path]) -> NetworkModel:
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(path, e.msg, line=e.lineno, column=e.colno)
        except OSError as e:
            raise ParseError(path, str(e))
        return FeederFile.from_dict(doc, path, name=path.stem)

    @staticmethod
    def from_dict(doc: dict, path="<feeder>", name: str = "feeder") -> NetworkModel:
        required = ("buses", "lines", "slack")
        for key in required:
            if key not in doc:
                raise ParseError(path, "missing top-level key", key=key)
        try:
            buses = tuple(
                Bus(
                    id=str(b["id"]),
                    phases=_phases(b["phases"], f"buses[{k}].phases", path),
                    base_kv=float(b["base_kv"]),
                    zone=str(b.get("zone", "Near")),
                    secondary=bool(b.get("secondary", False)),
                )
                for k, b in enumerate(doc["buses"])
            )
            lines = tuple(
                LineSegment(
                    id=str(l["id"]),
                    from_bus=str(l["from"]),
                    to_bus=str(l["to"]),
                    phases=_phases(l["phases"], f"lines[{k}].phases", path),
                    z_ohm=_z_matrix(l["z_ohm"], f"lines[{k}].z_ohm", path),
                )
                for k, l in enumerate(doc["lines"])
            )
            regulators = tuple(
                Regulator(
                    id=str(r["id"]),
                    from_bus=str(r["from"]),
                    to_bus=str(r["to"]),
                    phases=_phases(r["phases"], f"regulators[{k}].phases", path),
                    tap_ratio=float(r.get("tap_ratio", 1.0)),
                    tap_step=float(r.get("tap_step", DEFAULT_TAP_STEP)),
                    tap_range=tuple(float(v) for v in r.get("tap_range", (0.9, 1.1))),
                )
                for k, r in enumerate(doc.get("regulators", []))
            )
            capacitors = tuple(
                CapacitorBank(
                    id=str(c["id"]),
                    bus_id=str(c["bus"]),
                    phases=_phases(c["phases"], f"capacitors[{k}].phases", path),
                    kvar_per_phase=float(c["kvar_per_phase"]),
                    on=bool(c.get("on", True)),
                )
                for k, c in enumerate(doc.get("capacitors", []))
            )
            loads = tuple(
                LoadPoint(
                    id=str(l["id"]),
                    bus_id=str(l["bus"]),
                    phases=_phases(l["phases"], f"loads[{k}].phases", path),
                    kw_peak=float(l["kw_peak"]),
                    pf=float(l.get("pf", 0.95)),
                    profile_id=str(l.get("profile", "load-1")),
                )
                for k, l in enumerate(doc.get("loads", []))
            )
            pvs = []
            for k, p in enumerate(doc.get("pvs", [])):
                p_mpp = float(p["p_mpp_kw"])
                s_rating = float(p.get("s_rating_kva", p_mpp))
                q_max = p.get("q_max_kvar")
                if q_max is None:
                    q_max = math.sqrt(max(s_rating ** 2 - p_mpp ** 2, 0.0))
                pvs.append(PvSystem(
                    id=str(p["id"]),
                    bus_id=str(p["bus"]),
                    phases=_phases(p["phases"], f"pvs[{k}].phases", path),
                    p_mpp_kw=p_mpp,
                    s_rating_kva=s_rating,
                    q_max_kvar=float(q_max),
                    profile_id=str(p.get("profile", "pv-1")),
                    index=k,
                ))
            slack = doc["slack"]
            return NetworkModel(
                buses=buses,
                lines=lines,
                regulators=regulators,
                capacitors=capacitors,
                loads=loads,
                pvs=tuple(pvs),
                slack_bus=str(slack["bus"]),
                slack_voltage_pu=float(slack.get("voltage_pu", 1.0)),
                s_base_kva=float(slack.get("s_base_kva", 100.0)),
                name=name,
            )
        except KeyError as e:
            raise ParseError(path, "missing field", key=str(e.args[0]))
        except (TypeError, ValueError) as e:
            raise ParseError(path, str(e))

    @staticmethod
    def to_dict(model: NetworkModel) -> dict:
        def z(line: LineSegment):
            return [[[v.real, v.imag] for v in row] for row in line.z_ohm]

        return {
            "buses": [
                {"id": b.id, "phases": list(b.phases), "base_kv": b.base_kv,
                 "zone": b.zone, "secondary": b.secondary}
                for b in model.buses
            ],
            "lines": [
                {"id": l.id, "from": l.from_bus, "to": l.to_bus,
                 "phases": list(l.phases), "z_ohm": z(l)}
                for l in model.lines
            ],
            "regulators": [
                {"id": r.id, "from": r.from_bus, "to": r.to_bus, "phases": list(r.phases),
                 "tap_ratio": r.tap_ratio, "tap_step": r.tap_step,
                 "tap_range": list(r.tap_range)}
                for r in model.regulators
            ],
            "capacitors": [
                {"id": c.id, "bus": c.bus_id, "phases": list(c.phases),
                 "kvar_per_phase": c.kvar_per_phase, "on": c.on}
                for c in model.capacitors
            ],
            "loads": [
                {"id": l.id, "bus": l.bus_id, "phases": list(l.phases),
                 "kw_peak": l.kw_peak, "pf": l.pf, "profile": l.profile_id}
                for l in model.loads
            ],
            "pvs": [
                {"id": p.id, "bus": p.bus_id, "phases": list(p.phases),
                 "p_mpp_kw": p.p_mpp_kw, "s_rating_kva": p.s_rating_kva,
                 "q_max_kvar": p.q_max_kvar, "profile": p.profile_id}
                for p in model.pvs
            ],
            "slack": {"bus": model.slack_bus, "voltage_pu": model.slack_voltage_pu,
                      "s_base_kva": model.s_base_kva},
        }
