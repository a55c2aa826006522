#!/usr/bin/env python3
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .config import Config
from .coordinator import dispatch, dispatch_zoned
from .errors import FeederValidationError
from .feeder import FeederFile, NetworkModel, validate
from .harness import (BaselineSettings, Study, add_pvs, build_placement, default_grid,
                      feeder_hc, hc_sweep, hc_table, hourly_comparison, tune_baseline,
                      worst_case_table)
from .inverter import ControlMode, ModeKind, equilibrium_solve
from .powerflow import VoltageLimits, count_violations
from .profiles import ProfileKind, ProfileLibrary, assign_profiles, dump_profiles, load_profiles
from .reports import (summary_lines, write_dispatch, write_hc_reports, write_hc_table, write_hourly,
                      write_sensitivity, write_sweep, write_trace, write_voltages,
                      write_worst_case, write_zoned_comparison)
from .scenario import PLACEMENT_KINDS, Scenario, load_scenario
from .sensitivity import build, in_phase_dominance

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNMITIGATED = 3


class Controller:
    """Runs one command per method; CLI flags override scenario values."""

    def __init__(self, out_dir: Optional[Path] = None, seed: Optional[int] = None,
                 max_iterations: Optional[int] = None, limits: Optional[VoltageLimits] = None):
        self.out_dir = Path(out_dir) if out_dir else Config.get_out_dir()
        self.seed = seed
        self.max_iterations = max_iterations
        self.limits = limits

    def _output(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def _wrote(self, what: str, path: Path):
        print(f"Wrote {what} to {path}")

    def _scenario(self, path: str) -> Scenario:
        scn = load_scenario(path, defaults=Config.scenario_defaults())
        if self.seed is not None:
            scn = replace(scn, seed=self.seed)
        if self.max_iterations is not None:
            scn = replace(scn, coordinator=replace(scn.coordinator,
                                                   max_iterations=self.max_iterations))
        if self.limits is not None:
            scn = replace(scn, limits=self.limits)
        if scn.coordinator.workers == 1 and Config.get_workers() > 1:
            scn = replace(scn, coordinator=replace(scn.coordinator, workers=Config.get_workers()))
        return scn

    def _settings(self, scn: Scenario, model: NetworkModel, library: ProfileLibrary,
                  assignment: Dict[str, str]) -> Dict[int, BaselineSettings]:
        if not scn.baseline:
            return {}
        months = sorted(set(scn.grid_months) | {scn.month})
        if scn.baseline.get("tune"):
            return {m: tune_baseline(model, library, assignment, m, scn.limits, scn.solver,
                                     load_scale=scn.load_scale) for m in months}
        fixed = BaselineSettings.from_dict(scn.baseline)
        return {m: fixed for m in months}

    def _prepare(self, scn: Scenario) -> Tuple[NetworkModel, Study]:
        """Feeder with the scenario's PV units added, plus the study context."""
        base = scn.load_model()
        library = scn.library()
        assignment = {**assign_profiles(base, library, scn.seed), **scn.assignment}
        study = Study(library, assignment, scn.limits, scn.solver, scn.coordinator,
                      self._settings(scn, base, library, assignment), scn.load_scale)
        model = base
        if scn.placement.count:
            placement = build_placement(base, scn.placement.kind, scn.seed,
                                        scn.placement.unit_kw, scn.placement.unit_pf_sizing)
            model = add_pvs(base, placement, scn.placement.count,
                            library.ids(ProfileKind.PV))
        return model, study

    def _instant(self, scn: Scenario):
        model, study = self._prepare(scn)
        model = study.prepared(model, scn.month)
        return model, study, study.injection(model, scn.month, scn.hour)

    def validate(self, feeder_path: str) -> int:
        model = FeederFile.load(feeder_path)
        violations = validate(model)
        if violations:
            raise FeederValidationError(violations)
        print(f"{feeder_path}: valid ({len(model.buses)} buses, {len(model.pvs)} PVs, "
              f"peak load {model.peak_load_kw:.1f} kW)")
        return EXIT_OK

    def solve(self, scenario_path: str) -> int:
        scn = self._scenario(scenario_path)
        model, study, inj = self._instant(scn)
        mode = scn.control_mode
        if not mode.is_local:
            mode = ControlMode(ModeKind.UPF)
        sol, _ = equilibrium_solve(model, inj, mode, scn.solver)
        count = count_violations(sol, scn.limits)
        print(f"{mode.label}: {sol.iterations} iterations, {count.total} violations, "
              f"V in [{count.worst_lo:.4f}, {count.worst_hi:.4f}] p.u.")
        self._wrote("voltages", write_voltages(model, sol, self._output("voltages.csv")))
        return EXIT_OK

    def baseline(self, feeder_path: str, profiles_path: str) -> int:
        model = FeederFile.load(feeder_path)
        violations = validate(model)
        if violations:
            raise FeederValidationError(violations)
        library = load_profiles(profiles_path)
        limits = self.limits or Config.get_voltage_limits()
        assignment = assign_profiles(model, library, self.seed or 0)
        result = {}
        for month in sorted(library.months):
            settings = tune_baseline(model, library, assignment, month, limits,
                                     Config.get_solver_options())
            result[str(month)] = settings.to_dict()
            print(f"month {month}: taps {settings.taps} capacitors {settings.capacitors} "
                  f"residual {settings.violations}")
        path = self._output("baseline.json")
        path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
        self._wrote("baseline settings", path)
        return EXIT_OK

    def sensitivity(self, scenario_path: str) -> int:
        scn = self._scenario(scenario_path)
        model, _, inj = self._instant(scn)
        sm = build(model, inj, scn.coordinator.delta_q, scn.solver,
                   workers=scn.coordinator.workers)
        in_phase_dominance(sm, model)
        print(f"sensitivity {sm.shape[0]}x{sm.shape[1]} fingerprint {sm.fingerprint()}")
        self._wrote("sensitivity matrix", write_sensitivity(model, sm, self._output("sensitivity.csv")))
        return EXIT_OK

    def coordinate(self, scenario_path: str) -> int:
        scn = self._scenario(scenario_path)
        model, _, inj = self._instant(scn)
        result = dispatch(model, inj, scn.limits, scn.coordinator, scn.solver)
        for line in summary_lines(result):
            print(line)
        self._wrote("trace", write_trace(result, self._output("trace.csv")))
        self._wrote("dispatch", write_dispatch(model, result, self._output("dispatch.csv")))
        return EXIT_OK if result.mitigated else EXIT_UNMITIGATED

    def zoned(self, scenario_path: str) -> int:
        scn = self._scenario(scenario_path)
        model, _, inj = self._instant(scn)
        zoned = dispatch_zoned(model, inj, scn.limits, scn.coordinator, scn.solver)
        full = dispatch(model, inj, scn.limits, scn.coordinator, scn.solver)
        for phase, result in zoned.per_phase.items():
            print(f"phase {phase}: {result.status.value} after {result.final_state.iteration} iterations")
            self._wrote(f"phase {phase} trace",
                        write_trace(result, self._output(f"zoned_trace_{phase}.csv")))
        residual = zoned.residual.total if zoned.residual else "diverged"
        print(f"validation flow: {residual} residual violations "
              f"(full dispatch: {full.final_state.history[-1].violations})")
        self._wrote("zoned comparison",
                    write_zoned_comparison(model, zoned, full, self._output("zoned_comparison.csv")))
        return EXIT_OK if zoned.mitigated else EXIT_UNMITIGATED

    def hc_sweep(self, scenario_path: str, modes: Optional[Sequence[str]] = None) -> int:
        scn = self._scenario(scenario_path)
        base, study = self._prepare(replace(scn, placement=replace(scn.placement, count=0)))
        placement = build_placement(base, scn.placement.kind, scn.seed,
                                    scn.placement.unit_kw, scn.placement.unit_pf_sizing)
        grid = default_grid(scn.grid_months, scn.grid_hours)
        reports, rows = [], []
        for name in modes or [scn.mode]:
            mode = ControlMode.parse(name, scn.volt_var_curve)
            report, mode_rows = hc_sweep(base, placement, mode, grid, study, scn.max_units)
            reports.append(report)
            rows += mode_rows
            print(f"{mode.label}: +{report.added_kw_at_first_violation:.1f} kW, "
                  f"HC {report.hc_kw:.1f} kW ({report.hc_percent:.1f}% of peak load) [{report.status}]")
        self._wrote("sweep", write_sweep(rows, self._output("hc_sweep.csv")))
        self._wrote("reports", write_hc_reports(reports, self._output("hc_report.json")))
        return EXIT_OK

    def hc_table(self, scenario_path: str, modes: Optional[Sequence[str]] = None,
                 placements: Optional[Sequence[str]] = None) -> int:
        scn = self._scenario(scenario_path)
        base, study = self._prepare(replace(scn, placement=replace(scn.placement, count=0)))
        controls = [ControlMode.parse(name, scn.volt_var_curve) for name in modes or [scn.mode]]
        kinds = list(placements or PLACEMENT_KINDS)
        rows = hc_table(base, kinds, controls, scn.grid_months, scn.grid_hours, scn.seed, study,
                        scn.placement.unit_kw, scn.placement.unit_pf_sizing, scn.max_units)
        for control in controls:
            print(f"{control.label}: feeder HC +{feeder_hc(rows, control.label):.1f} kW "
                  f"(lowest of {len(kinds)} placements x {len(scn.grid_months)} months)")
        self._wrote("hosting-capacity table", write_hc_table(rows, self._output("hc_table.csv")))
        return EXIT_OK

    def profiles(self, seed: int, months: List[int], count_load: int = 5, count_pv: int = 6,
                 resolution: str = "hourly") -> int:
        library = ProfileLibrary.generate(seed, months, count_load, count_pv, resolution)
        path = self._output("profiles.json")
        dump_profiles(library, path, seed)
        self._wrote(f"{len(months)} months of profiles", path)
        return EXIT_OK

    def compare(self, scenario_path: str) -> int:
        scn = self._scenario(scenario_path)
        model, study = self._prepare(scn)
        model = study.prepared(model, scn.month)
        inj_by_hour = {h: study.injection(model, scn.month, h) for h in scn.grid_hours}
        rows = hourly_comparison(model, inj_by_hour, scn.limits, scn.solver, scn.coordinator,
                                 ControlMode(ModeKind.VOLT_VAR, curve=scn.volt_var_curve))
        self._wrote("hourly comparison", write_hourly(rows, self._output("comparison.csv")))
        return EXIT_OK

    def worst_case(self, scenario_path: str, mode: Optional[str] = None) -> int:
        scn = self._scenario(scenario_path)
        model, study = self._prepare(scn)
        control = ControlMode.parse(mode or "upf", scn.volt_var_curve)
        rows = worst_case_table(model, control, default_grid(scn.grid_months, scn.grid_hours), study)
        for row in rows:
            print(f"month {row.month}: hour {row.hour:g}, {row.violations} violations, "
                  f"max V {row.max_v:.4f}")
        self._wrote("worst-case table", write_worst_case(rows, self._output("worst_case.csv")))
        return EXIT_OK

    def init_config(self) -> int:
        path = Config.save_default()
        self._wrote("default configuration", path)
        return EXIT_OK
