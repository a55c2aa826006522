import math
from pathlib import Path

import numpy as np
import pytest

from voltctl.config import Config
from voltctl.feeder import (PHASES, Bus, CapacitorBank, FeederFile, LineSegment, LoadPoint,
                            NetworkModel, PvSystem, Regulator, effective_q_max)
from voltctl.powerflow import InjectionState, SolverOptions, VoltageLimits, count_violations, solve

ROOT = Path(__file__).resolve().parent.parent
FEEDERS = ROOT / "feeders"
SCENARIOS = ROOT / "scenarios"

BASE_KV = 0.25
S_BASE = 100.0
Z_BASE = BASE_KV ** 2 * 1000.0 / S_BASE

TIGHT = SolverOptions(tolerance=1e-11, max_iter=200)


@pytest.fixture(autouse=True)
def isolated_config(tmp_path, monkeypatch):
    """Every test sees the built-in defaults, never the developer's config file."""
    monkeypatch.setenv("VOLTCTL_CONFIG", str(tmp_path / "config.yml"))
    Config.reset()
    yield
    Config.reset()


def load_feeder(name: str) -> NetworkModel:
    return FeederFile.load(FEEDERS / f"{name}.json")


@pytest.fixture
def desk30():
    return load_feeder("desk30")


@pytest.fixture
def mutual_ov():
    return load_feeder("mutual_ov")


def two_bus(r_pu: float, x_pu: float, slack_pu: float = 1.0, pv_kw: float = 0.0,
            s_rating: float = 0.0) -> NetworkModel:
    """Single-phase source and load bus joined by one line given in per unit."""
    z = ((complex(r_pu * Z_BASE, x_pu * Z_BASE),),)
    pvs = ()
    if pv_kw:
        pv = PvSystem("PV1", "b1", ("A",), pv_kw, s_rating, 0.0)
        pvs = (PvSystem("PV1", "b1", ("A",), pv_kw, s_rating, effective_q_max(pv)),)
    return NetworkModel(
        buses=(Bus("src", ("A",), BASE_KV), Bus("b1", ("A",), BASE_KV, "Far")),
        lines=(LineSegment("l1", "src", "b1", ("A",), z),),
        regulators=(),
        capacitors=(),
        loads=(LoadPoint("L1", "b1", ("A",), 50.0),),
        pvs=pvs,
        slack_bus="src",
        slack_voltage_pu=slack_pu,
    )


def injection(model: NetworkModel, load_kw=None, load_kvar=None, pv_kw=None, pv_kvar=None,
              cap_on=None) -> InjectionState:
    def vector(value, n):
        return np.zeros(n) if value is None else np.array(value, dtype=float) * np.ones(n)

    return InjectionState(
        load_kw=vector(load_kw, len(model.loads)),
        load_kvar=vector(load_kvar, len(model.loads)),
        pv_kw=vector(pv_kw, len(model.pvs)),
        pv_kvar=vector(pv_kvar, len(model.pvs)),
        cap_on=(np.array([c.on for c in model.capacitors], dtype=bool) if cap_on is None
                else np.array(cap_on, dtype=bool)),
    )


def _z_block(rng: np.random.Generator, phases) -> tuple:
    n = len(phases)
    r = rng.uniform(0.004, 0.012, n)
    x = r * rng.uniform(1.0, 2.5, n)
    z = np.diag(r + 1j * x)
    for a in range(n):
        for b in range(a + 1, n):
            m = complex(0.3 * min(r[a], r[b]), 0.4 * min(x[a], x[b]))
            z[a, b] = z[b, a] = m
    return tuple(tuple(complex(v) for v in row) for row in z)


def random_radial(seed: int, max_nodes: int = 40) -> NetworkModel:
    """Unbalanced radial feeder with laterals, a regulator, a capacitor and PVs."""
    rng = np.random.default_rng(seed)
    buses = [Bus("b00", PHASES, BASE_KV)]
    lines, loads, pvs = [], [], []
    regulators, capacitors = [], []
    nodes = 3
    k = 1
    while True:
        parent = buses[int(rng.integers(len(buses)))]
        if len(parent.phases) == 3 and rng.random() < 0.6:
            phases = PHASES
        else:
            phases = (parent.phases[int(rng.integers(len(parent.phases)))],)
        if nodes + len(phases) > max_nodes:
            break
        bus = Bus(f"b{k:02d}", phases, BASE_KV, "Far" if k > 4 else "Near")
        buses.append(bus)
        nodes += len(phases)
        if not regulators and len(phases) == 3 and parent.id != "b00" and rng.random() < 0.5:
            regulators.append(Regulator(f"r{k}", parent.id, bus.id, PHASES,
                                        tap_ratio=1.0 + int(rng.integers(-4, 5)) * 0.00625))
        else:
            lines.append(LineSegment(f"l{k}", parent.id, bus.id, phases, _z_block(rng, phases)))
        if rng.random() < 0.7:
            loads.append(LoadPoint(f"L{k}", bus.id, phases, float(rng.uniform(5, 25)) * len(phases),
                                   float(rng.uniform(0.85, 0.99))))
        if rng.random() < 0.4:
            p = float(rng.uniform(3, 15))
            pv = PvSystem(f"PV{k}", bus.id, phases, p, p / 0.9, 0.0, index=len(pvs))
            pvs.append(PvSystem(pv.id, pv.bus_id, phases, p, p / 0.9, effective_q_max(pv),
                                index=len(pvs)))
        if not capacitors and len(phases) == 3 and rng.random() < 0.3:
            capacitors.append(CapacitorBank(f"C{k}", bus.id, PHASES, 10.0, True))
        k += 1
    return NetworkModel(tuple(buses), tuple(lines), tuple(regulators), tuple(capacitors),
                        tuple(loads), tuple(pvs), "b00", 1.0, S_BASE, name=f"random-{seed}")


def random_injection(model: NetworkModel, seed: int, pv_share: float = 0.8) -> InjectionState:
    rng = np.random.default_rng([seed, 1])
    load_kw = np.array([load.kw_peak * rng.uniform(0.3, 1.0) for load in model.loads])
    load_kvar = np.array([p * math.tan(math.acos(load.pf)) for p, load in zip(load_kw, model.loads)])
    pv_kw = np.array([pv.p_mpp_kw * pv_share for pv in model.pvs])
    pv_kvar = np.array([pv.q_max_kvar * rng.uniform(-0.5, 0.5) for pv in model.pvs])
    return InjectionState(load_kw, load_kvar, pv_kw, pv_kvar,
                          np.array([c.on for c in model.capacitors], dtype=bool))


def pv_unit(pv_id: str, bus_id: str, phases, kw: float, sizing: float = 0.9) -> PvSystem:
    pv = PvSystem(pv_id, bus_id, tuple(phases), kw, kw / sizing, 0.0)
    return PvSystem(pv_id, bus_id, tuple(phases), kw, kw / sizing, effective_q_max(pv))


FAR_ENDS = (("la2", "A"), ("lb2", "B"), ("lc2", "C"), ("la1", "A"), ("lb1", "B"), ("lc1", "C"),
            ("t5", "A"), ("t5", "B"), ("t5", "C"))


def far_overvoltage(model: NetworkModel, v_peak: float = 1.07, share: float = 0.3,
                    load_share: float = 0.4):
    """Grow single-phase PVs at the far end until the peak and spread of over-voltage are reached."""
    for kw in np.arange(5.0, 200.0, 2.5):
        grown = model.with_pvs([pv_unit(f"x{k}", bus, (ph,), float(kw))
                                for k, (bus, ph) in enumerate(FAR_ENDS)])
        inj = injection(grown, load_kw=[l.kw_peak * load_share for l in grown.loads],
                        pv_kw=[pv.p_mpp_kw for pv in grown.pvs])
        inj = InjectionState(inj.load_kw, inj.load_kw * 0.3, inj.pv_kw, inj.pv_kvar, inj.cap_on)
        sol = solve(grown, inj)
        over = count_violations(sol, VoltageLimits()).over
        if sol.v_mag_pu.max() > v_peak and over > share * len(sol.v_mag_pu):
            return grown, inj, sol
    raise AssertionError("could not engineer the over-voltage")
