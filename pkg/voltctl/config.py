#!/usr/bin/env python3
import os
import yaml
from pathlib import Path
from typing import Optional

from .coordinator import CoordinatorOptions
from .inverter import VoltVarCurve
from .powerflow import SolverOptions, VoltageLimits


class Config:
    """User configuration for voltctl, read from YAML."""

    _config = None
    _config_path = Path.home() / ".config" / "voltctl" / "config.yml"

    @classmethod
    def path(cls) -> Path:
        override = os.environ.get("VOLTCTL_CONFIG")
        return Path(override).expanduser() if override else cls._config_path

    @classmethod
    def _load_config(cls):
        """Load config from file, falling back to defaults when missing."""
        if cls._config is not None:
            return

        cls._config = cls._get_default_config()
        path = cls.path()
        if path.exists():
            with open(path, "r") as f:
                user = yaml.safe_load(f) or {}
            for key, value in user.items():
                if isinstance(value, dict) and isinstance(cls._config.get(key), dict):
                    cls._config[key].update(value)
                else:
                    cls._config[key] = value

    @classmethod
    def _get_default_config(cls) -> dict:
        """Get default configuration."""
        return {
            "solver": {"tolerance": 1e-6, "max_iter": 100, "divergence_window": 5},
            "limits": {"v_th_min": 0.95, "v_th_max": 1.05, "v_pu_min": 0.955, "v_pu_max": 1.045},
            "volt_var_curve": VoltVarCurve().to_dict(),
            "coordinator": {"max_iterations": 3, "delta_q": 1.0, "objective": "l1",
                            "q_headroom": "rated"},
            "out_dir": "out",
            "log_level": "WARNING",
            "workers": 1,
        }

    @classmethod
    def save_default(cls, path: Optional[Path] = None) -> Path:
        """Write the default configuration (``voltctl init-config``)."""
        path = path or cls.path()
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            yaml.dump(cls._get_default_config(), f, default_flow_style=False)
        return path

    @classmethod
    def reset(cls):
        cls._config = None

    @classmethod
    def scenario_defaults(cls) -> dict:
        """Sections a scenario file inherits when it leaves them out."""
        cls._load_config()
        return {key: dict(cls._config[key])
                for key in ("solver", "limits", "volt_var_curve", "coordinator")}

    @classmethod
    def get_solver_options(cls) -> SolverOptions:
        cls._load_config()
        return SolverOptions(**cls._config["solver"])

    @classmethod
    def get_voltage_limits(cls) -> VoltageLimits:
        cls._load_config()
        return VoltageLimits(**cls._config["limits"])

    @classmethod
    def get_volt_var_curve(cls) -> VoltVarCurve:
        cls._load_config()
        return VoltVarCurve.from_dict(cls._config["volt_var_curve"])

    @classmethod
    def get_coordinator_options(cls) -> CoordinatorOptions:
        cls._load_config()
        options = {"workers": cls.get_workers(), **cls._config["coordinator"]}
        return CoordinatorOptions(**options)

    @classmethod
    def get_out_dir(cls) -> Path:
        cls._load_config()
        return Path(cls._config["out_dir"]).expanduser()

    @classmethod
    def get_log_level(cls) -> str:
        cls._load_config()
        return str(cls._config["log_level"]).upper()

    @classmethod
    def get_workers(cls) -> int:
        cls._load_config()
        return int(cls._config["workers"])
