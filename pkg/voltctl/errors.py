#!/usr/bin/env python3
from typing import List, Optional


class VoltctlError(Exception):
    """Base class for every error raised by voltctl."""

    exit_code = 1


class FeederValidationError(VoltctlError):
    """Feeder description breaks one or more model invariants."""

    exit_code = 2

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"{v.code} ({v.element}): {v.message}" for v in self.violations]
        super().__init__("Invalid feeder:\n  " + "\n  ".join(lines))


class ParseError(VoltctlError):
    """Feeder, scenario or profile file could not be parsed."""

    exit_code = 2

    def __init__(self, path, message: str, line: Optional[int] = None,
                 column: Optional[int] = None, key: Optional[str] = None):
        self.path = str(path)
        self.line = line
        self.column = column
        self.key = key
        where = self.path
        if line is not None:
            where += f":{line}:{column or 0}"
        if key:
            where += f" [{key}]"
        super().__init__(f"{where}: {message}")


class ScenarioValidationError(VoltctlError):
    """Scenario parsed but references or values are invalid."""

    exit_code = 2

    def __init__(self, failures: List[str]):
        self.failures = list(failures)
        super().__init__("Invalid scenario:\n  " + "\n  ".join(self.failures))


class QmaxDomainError(VoltctlError, ValueError):
    """Apparent power rating below active power: no reactive headroom exists."""


class PowerFlowDiverged(VoltctlError):
    """Backward/forward sweep failed to converge."""

    exit_code = 3

    def __init__(self, message: str, trace: List[float], solution=None):
        self.trace = list(trace)
        self.solution = solution
        super().__init__(f"{message} after {len(self.trace)} iterations")


class PerturbedFlowDiverged(VoltctlError):
    """Power flow with one PV's reactive power perturbed did not converge."""

    def __init__(self, pv_index: int, cause: PowerFlowDiverged):
        self.pv_index = pv_index
        self.cause = cause
        super().__init__(f"perturbation of PV #{pv_index} diverged: {cause}")


class VoltVarOscillation(VoltctlError):
    """Damped volt-VAr equilibrium loop ran out of cycles."""

    exit_code = 3

    def __init__(self, cycles: int, max_delta_kvar: float):
        self.cycles = cycles
        self.max_delta_kvar = max_delta_kvar
        super().__init__(
            f"volt-VAr loop not settled after {cycles} cycles "
            f"(last max dQ {max_delta_kvar:.4f} kVAr)"
        )


class NumericalBreakdown(VoltctlError):
    """Simplex could not continue because of a degenerate or non-finite pivot."""
