#!/usr/bin/env python3
"""Scenario files: one JSON document describing a study run.

``load_scenario`` layers the file over the built-in defaults (and any user
config defaults), parses every section strictly and then validates the
references as a whole, reporting every failure at once.
"""
import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from .coordinator import CoordinatorOptions
from .errors import FeederValidationError, ParseError, ScenarioValidationError, VoltctlError
from .feeder import ZONES, FeederFile, NetworkModel, validate
from .inverter import ControlMode, VoltVarCurve
from .powerflow import SolverOptions, VoltageLimits
from .profiles import RESOLUTIONS, ProfileKind, ProfileLibrary, load_profiles

PLACEMENT_KINDS = ("All",) + ZONES

DEFAULTS = {
    "name": "scenario",
    "month": 8,
    "hour": 12,
    "mode": "coordinated",
    "load_scale": 1.0,
    "placement": {"kind": "All", "count": 0, "unit_kw": 10.0, "unit_pf_sizing": 0.9},
    "limits": {"v_th_min": 0.95, "v_th_max": 1.05, "v_pu_min": 0.955, "v_pu_max": 1.045},
    "volt_var_curve": VoltVarCurve().to_dict(),
    "solver": {"tolerance": 1e-06, "max_iter": 100, "divergence_window": 5},
    "coordinator": {"max_iterations": 3, "delta_q": 1.0, "objective": "l1",
                    "q_headroom": "rated", "workers": 1},
    "profiles": {"count_load": 5, "count_pv": 6, "resolution": "hourly"},
    "grid": {"months": [5, 6, 7, 8, 9, 10], "hours": list(range(7, 18))},
    "max_units": 200,
    "assignment": {},
}

_REQUIRED = ("feeder", "seed")


@dataclass(frozen=True)
class PlacementSpec:
    kind: str = "All"
    count: int = 0
    unit_kw: float = 10.0
    unit_pf_sizing: float = 0.9


@dataclass(frozen=True)
class ProfileSpec:
    count_load: int = 5
    count_pv: int = 6
    resolution: str = "hourly"
    path: Optional[str] = None


@dataclass(frozen=True)
class Scenario:
    feeder: str
    seed: int
    name: str = "scenario"
    month: int = 8
    hour: float = 12
    mode: str = "coordinated"
    load_scale: float = 1.0
    placement: PlacementSpec = field(default_factory=PlacementSpec)
    limits: VoltageLimits = field(default_factory=VoltageLimits)
    volt_var_curve: VoltVarCurve = field(default_factory=VoltVarCurve)
    solver: SolverOptions = field(default_factory=SolverOptions)
    coordinator: CoordinatorOptions = field(default_factory=CoordinatorOptions)
    profiles: ProfileSpec = field(default_factory=ProfileSpec)
    grid_months: Tuple[int, ...] = (5, 6, 7, 8, 9, 10)
    grid_hours: Tuple[float, ...] = tuple(range(7, 18))
    max_units: int = 200
    assignment: Dict[str, str] = field(default_factory=dict, hash=False)
    baseline: Optional[dict] = field(default=None, hash=False)
    source: Optional[Path] = field(default=None, compare=False, hash=False)

    @property
    def control_mode(self) -> ControlMode:
        return ControlMode.parse(self.mode, self.volt_var_curve)

    def feeder_path(self) -> Path:
        path = Path(self.feeder)
        if not path.is_absolute() and self.source is not None:
            path = self.source.parent / path
        return path

    def profile_path(self) -> Optional[Path]:
        if self.profiles.path is None:
            return None
        path = Path(self.profiles.path)
        if not path.is_absolute() and self.source is not None:
            path = self.source.parent / path
        return path

    def load_model(self) -> NetworkModel:
        return FeederFile.load(self.feeder_path())

    def library(self) -> ProfileLibrary:
        path = self.profile_path()
        if path is not None:
            return load_profiles(path)
        months = sorted(set(self.grid_months) | {self.month})
        return ProfileLibrary.generate(self.seed, months, self.profiles.count_load,
                                       self.profiles.count_pv, self.profiles.resolution)

    def to_dict(self) -> dict:
        doc = {
            "name": self.name,
            "feeder": self.feeder,
            "seed": self.seed,
            "month": self.month,
            "hour": self.hour,
            "mode": self.mode,
            "load_scale": self.load_scale,
            "placement": {
                "kind": self.placement.kind,
                "count": self.placement.count,
                "unit_kw": self.placement.unit_kw,
                "unit_pf_sizing": self.placement.unit_pf_sizing,
            },
            "limits": {
                "v_th_min": self.limits.v_th_min,
                "v_th_max": self.limits.v_th_max,
                "v_pu_min": self.limits.v_pu_min,
                "v_pu_max": self.limits.v_pu_max,
            },
            "volt_var_curve": self.volt_var_curve.to_dict(),
            "solver": {
                "tolerance": self.solver.tolerance,
                "max_iter": self.solver.max_iter,
                "divergence_window": self.solver.divergence_window,
            },
            "coordinator": {
                "max_iterations": self.coordinator.max_iterations,
                "delta_q": self.coordinator.delta_q,
                "objective": self.coordinator.objective,
                "q_headroom": self.coordinator.q_headroom,
                "workers": self.coordinator.workers,
            },
            "profiles": {
                "count_load": self.profiles.count_load,
                "count_pv": self.profiles.count_pv,
                "resolution": self.profiles.resolution,
            },
            "grid": {"months": list(self.grid_months), "hours": list(self.grid_hours)},
            "max_units": self.max_units,
            "assignment": dict(self.assignment),
        }
        if self.profiles.path is not None:
            doc["profiles"]["path"] = self.profiles.path
        if self.baseline is not None:
            doc["baseline"] = copy.deepcopy(self.baseline)
        return doc


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "assignment":
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _section(doc: dict, key: str, cls, path, convert=None):
    values = doc[key]
    if not isinstance(values, dict):
        raise ParseError(path, "expected an object", key=key)
    allowed = set(cls.__dataclass_fields__)
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ParseError(path, f"unknown keys {unknown}", key=key)
    try:
        if convert:
            values = {k: convert[k](v) if k in convert else v for k, v in values.items()}
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ParseError(path, str(exc), key=key) from exc


def from_dict(doc: dict, path: Union[str, Path] = "<scenario>",
              defaults: Optional[dict] = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ParseError(path, "scenario must be a JSON object")
    for key in _REQUIRED:
        if key not in doc:
            raise ParseError(path, "required key missing", key=key)
    unknown = sorted(set(doc) - set(DEFAULTS) - set(_REQUIRED) - {"baseline"})
    if unknown:
        raise ParseError(path, f"unknown keys {unknown}")
    merged = _merge(_merge(DEFAULTS, defaults or {}), doc)

    def scalar(key, kind):
        value = merged[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or isinstance(value, bool):
            raise ParseError(path, f"expected {kind.__name__}, got {value!r}", key=key)
        return value

    resolution = merged["profiles"].get("resolution") if isinstance(merged["profiles"], dict) else None

    def hour_of(value, key):
        # Whole hours everywhere; fractions only resolve against minutely profiles.
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(path, f"expected a number of hours, got {value!r}", key=key)
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, float) and resolution != "minutely":
            raise ParseError(path, f"fractional hour {value!r} needs minutely profiles", key=key)
        return value

    grid = merged["grid"]
    try:
        grid_months = tuple(int(m) for m in grid["months"])
        hours = list(grid["hours"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(path, f"grid needs integer months and a list of hours ({exc})",
                         key="grid") from exc
    grid_hours = tuple(hour_of(h, "grid") for h in hours)

    assignment = merged["assignment"]
    if not isinstance(assignment, dict) or not all(isinstance(v, str) for v in assignment.values()):
        raise ParseError(path, "expected a map of element id to profile id", key="assignment")

    return Scenario(
        feeder=scalar("feeder", str),
        seed=scalar("seed", int),
        name=scalar("name", str),
        month=scalar("month", int),
        hour=hour_of(merged["hour"], "hour"),
        mode=scalar("mode", str),
        load_scale=scalar("load_scale", float),
        placement=_section(merged, "placement", PlacementSpec, path,
                           {"unit_kw": float, "unit_pf_sizing": float}),
        limits=_section(merged, "limits", VoltageLimits, path),
        volt_var_curve=_section(merged, "volt_var_curve", VoltVarCurve, path),
        solver=_section(merged, "solver", SolverOptions, path, {"tolerance": float}),
        coordinator=_section(merged, "coordinator", CoordinatorOptions, path, {"delta_q": float}),
        profiles=_section(merged, "profiles", ProfileSpec, path),
        grid_months=grid_months,
        grid_hours=grid_hours,
        max_units=scalar("max_units", int),
        assignment=dict(assignment),
        baseline=merged.get("baseline"),
        source=Path(path) if path != "<scenario>" else None,
    )


def check(scn: Scenario, model: Optional[NetworkModel] = None,
          library: Optional[ProfileLibrary] = None) -> List[str]:
    """Every reference and range problem in a parsed scenario."""
    failures = []
    if not 1 <= scn.month <= 12:
        failures.append(f"month {scn.month} outside 1..12")
    if not 0 <= scn.hour < 24:
        failures.append(f"hour {scn.hour} outside 0..23")
    failures += [f"grid month {m} outside 1..12" for m in scn.grid_months if not 1 <= m <= 12]
    failures += [f"grid hour {h} outside 0..23" for h in scn.grid_hours if not 0 <= h < 24]
    try:
        scn.control_mode
    except ValueError as exc:
        failures.append(f"mode: {exc}")
    if scn.placement.kind not in PLACEMENT_KINDS:
        failures.append(f"placement kind {scn.placement.kind!r} not in {PLACEMENT_KINDS}")
    if scn.placement.count < 0 or scn.max_units < 0:
        failures.append("placement count and max_units must be non-negative")
    if scn.placement.unit_kw <= 0 or not 0 < scn.placement.unit_pf_sizing <= 1:
        failures.append("unit_kw must be positive and unit_pf_sizing in (0, 1]")
    if scn.profiles.resolution not in RESOLUTIONS:
        failures.append(f"profile resolution {scn.profiles.resolution!r} not in {sorted(RESOLUTIONS)}")
    if scn.profiles.count_load < 1 or scn.profiles.count_pv < 1:
        failures.append("profile counts must be at least 1")
    if failures:
        return failures

    if model is None:
        try:
            model = scn.load_model()
        except VoltctlError as exc:
            return failures + [f"feeder: {exc}"]
    failures += [f"feeder {v.code} ({v.element}): {v.message}" for v in validate(model)]

    if library is None:
        try:
            library = scn.library()
        except VoltctlError as exc:
            return failures + [f"profiles: {exc}"]
    fractional = [h for h in (scn.hour,) + scn.grid_hours if not float(h).is_integer()]
    hourly = any(p.resolution == "hourly" for profiles in library.months.values()
                 for p in profiles.values())
    if fractional and hourly:
        failures.append(f"fractional hours {fractional} need minutely profiles")

    element_ids = {e.id for e in model.loads} | {e.id for e in model.pvs}
    for element_id, profile_id in sorted(scn.assignment.items()):
        if element_id not in element_ids:
            failures.append(f"assignment names unknown element {element_id!r}")
        if not library.has(profile_id):
            failures.append(f"unknown profile id {profile_id!r} (assigned to {element_id})")
    for element in list(model.loads) + list(model.pvs):
        if element.id not in scn.assignment and not library.has(element.profile_id):
            failures.append(f"unknown profile id {element.profile_id!r} (used by {element.id})")
    for element_id, profile_id in scn.assignment.items():
        kind = ProfileKind.PV if element_id in {pv.id for pv in model.pvs} else ProfileKind.LOAD
        if library.has(profile_id) and profile_id not in library.ids(kind):
            failures.append(f"profile {profile_id!r} is not a {kind.value} profile ({element_id})")
    return failures


def load_scenario(path: Union[str, Path], defaults: Optional[dict] = None,
                  check_references: bool = True) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ParseError(path, "file not found") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.msg, line=exc.lineno, column=exc.colno) from exc
    scn = from_dict(doc, path, defaults)
    if check_references:
        try:
            failures = check(scn)
        except FeederValidationError as exc:
            failures = [str(exc)]
        if failures:
            raise ScenarioValidationError(failures)
    return scn


def dump_scenario(scn: Scenario) -> str:
    """Canonical text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(scn.to_dict(), indent=2, sort_keys=True) + "\n"
