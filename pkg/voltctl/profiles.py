#!/usr/bin/env python3
"""Seeded synthetic diurnal profiles and their assignment to feeder elements.

All randomness flows through ``numpy.random.default_rng`` (PCG64). A month's
library is drawn from the stream ``default_rng([seed, month])`` so any month
can be regenerated on its own.
"""
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np

from .errors import ParseError
from .feeder import NetworkModel
from .powerflow import InjectionState

RESOLUTIONS = {"hourly": 24, "minutely": 1440}


class ProfileKind(str, Enum):
    LOAD = "load"
    PV = "pv"


@dataclass(frozen=True, eq=False)
class Profile:
    id: str
    kind: ProfileKind
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if len(values) not in RESOLUTIONS.values():
            raise ValueError(f"profile {self.id}: {len(values)} values, expected 24 or 1440")
        if np.any(values < 0) or np.any(values > 1):
            raise ValueError(f"profile {self.id}: values must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    @property
    def resolution(self) -> str:
        return "hourly" if len(self.values) == 24 else "minutely"

    def at(self, hour: float) -> float:
        """Value at an hour of day; minutely profiles accept fractional hours."""
        steps = len(self.values)
        index = int(math.floor(hour * steps / 24 + 1e-9)) % steps
        return float(self.values[index])

    @property
    def peak_hour(self) -> float:
        return float(np.argmax(self.values)) * 24 / len(self.values)


def _season(month: int) -> float:
    """1 in mid-summer, -1 in mid-winter."""
    return math.cos(2 * math.pi * (month - 6.5) / 12)


def _times(steps: int) -> np.ndarray:
    return np.arange(steps) * 24.0 / steps


def _pv_shape(rng: np.random.Generator, month: int, t: np.ndarray) -> np.ndarray:
    centre = 12.0 + rng.uniform(-0.4, 0.4)
    half_day = 6.0 + 1.5 * _season(month)
    width = half_day / 2.2 * (1 + rng.uniform(-0.1, 0.1))
    bell = np.exp(-0.5 * ((t - centre) / width) ** 2)
    bell = np.where(np.abs(t - centre) < half_day, bell, 0.0)
    haze = 1.0 - rng.uniform(0.0, 0.03, size=len(t))
    return bell * haze


def _load_shape(rng: np.random.Generator, month: int, t: np.ndarray) -> np.ndarray:
    morning = 0.45 * (1 + rng.uniform(-0.15, 0.15))
    evening = (0.75 + 0.2 * max(_season(month), 0.0)) * (1 + rng.uniform(-0.1, 0.1))
    shape = (
        0.35
        + morning * np.exp(-0.5 * ((t - 7.5 - rng.uniform(-0.5, 0.5)) / 1.5) ** 2)
        + evening * np.exp(-0.5 * ((t - 19.0 - rng.uniform(-0.5, 0.5)) / 2.0) ** 2)
    )
    return shape * (1.0 + rng.uniform(-0.02, 0.02, size=len(t)))


def _normalised(values: np.ndarray) -> np.ndarray:
    peak = values.max()
    return np.clip(values / peak, 0.0, 1.0) if peak > 0 else values


def generate_profiles(seed: int, count_load: int, count_pv: int, month: int = 8,
                      resolution: str = "hourly") -> List[Profile]:
    """``count_load`` double-peak load shapes then ``count_pv`` clear-sky PV bells."""
    if count_load < 1 or count_pv < 1:
        raise ValueError("at least one load and one PV profile are required")
    t = _times(RESOLUTIONS[resolution])
    rng = np.random.default_rng([seed, month])
    profiles = [
        Profile(f"load-{k}", ProfileKind.LOAD, _normalised(_load_shape(rng, month, t)))
        for k in range(1, count_load + 1)
    ]
    profiles += [
        Profile(f"pv-{k}", ProfileKind.PV, _normalised(_pv_shape(rng, month, t)))
        for k in range(1, count_pv + 1)
    ]
    return profiles


class ProfileLibrary:
    """Profiles per month, keyed by month-invariant ids."""

    def __init__(self, months: Dict[int, List[Profile]]):
        self.months = {m: {p.id: p for p in profiles} for m, profiles in months.items()}

    @classmethod
    def generate(cls, seed: int, months: Iterable[int], count_load: int = 5, count_pv: int = 6,
                 resolution: str = "hourly") -> "ProfileLibrary":
        return cls({m: generate_profiles(seed, count_load, count_pv, m, resolution)
                    for m in months})

    def ids(self, kind: ProfileKind) -> List[str]:
        first = next(iter(self.months.values()), {})
        return sorted((p.id for p in first.values() if p.kind == kind),
                      key=lambda pid: int(pid.rsplit("-", 1)[1]))

    def get(self, month: int, profile_id: str) -> Profile:
        try:
            return self.months[month][profile_id]
        except KeyError:
            raise KeyError(f"no profile {profile_id!r} for month {month}") from None

    def has(self, profile_id: str) -> bool:
        return all(profile_id in profiles for profiles in self.months.values())


def assign_profiles(model: NetworkModel, profiles: Union[ProfileLibrary, List[Profile]],
                    seed: int) -> Dict[str, str]:
    """Seeded uniform draw of a profile id for every load and PV, keyed by element id."""
    if isinstance(profiles, ProfileLibrary):
        load_ids, pv_ids = profiles.ids(ProfileKind.LOAD), profiles.ids(ProfileKind.PV)
    else:
        load_ids = [p.id for p in profiles if p.kind == ProfileKind.LOAD]
        pv_ids = [p.id for p in profiles if p.kind == ProfileKind.PV]
    if not load_ids or not pv_ids:
        raise ValueError("need at least one load and one PV profile")
    rng = np.random.default_rng(seed)
    picks_load = rng.integers(len(load_ids), size=len(model.loads))
    picks_pv = rng.integers(len(pv_ids), size=len(model.pvs))
    assignment = {load.id: load_ids[k] for load, k in zip(model.loads, picks_load)}
    assignment.update({pv.id: pv_ids[k] for pv, k in zip(model.pvs, picks_pv)})
    return assignment


def build_injection(model: NetworkModel, library: ProfileLibrary, assignment: Dict[str, str],
                    month: int, hour: float, load_scale: float = 1.0) -> InjectionState:
    """Operating point at one instant: profile-scaled loads, PV at UPF, capacitors as set."""
    def value(element) -> float:
        return library.get(month, assignment.get(element.id, element.profile_id)).at(hour)

    load_kw = np.array([load.kw_peak * value(load) * load_scale for load in model.loads])
    tan_phi = np.array([math.tan(math.acos(load.pf)) for load in model.loads])
    pv_kw = np.array([pv.p_mpp_kw * value(pv) for pv in model.pvs])
    return InjectionState(
        load_kw=load_kw,
        load_kvar=load_kw * tan_phi,
        pv_kw=pv_kw,
        pv_kvar=np.zeros(len(model.pvs)),
        cap_on=np.array([cap.on for cap in model.capacitors], dtype=bool),
    )


def dump_profiles(library: ProfileLibrary, path: Union[str, Path], seed: Optional[int] = None):
    doc = {
        "seed": seed,
        "months": {
            str(m): {pid: [float(v) for v in p.values] for pid, p in sorted(profiles.items())}
            for m, profiles in sorted(library.months.items())
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_profiles(path: Union[str, Path]) -> ProfileLibrary:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        months = {}
        for month, entries in doc["months"].items():
            months[int(month)] = [
                Profile(pid, ProfileKind.PV if pid.startswith("pv") else ProfileKind.LOAD, values)
                for pid, values in entries.items()
            ]
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.msg, line=exc.lineno, column=exc.colno) from exc
    except KeyError as exc:
        raise ParseError(path, "missing key", key=str(exc.args[0])) from exc
    except (TypeError, ValueError) as exc:
        raise ParseError(path, str(exc)) from exc
    return ProfileLibrary(months)
