#!/usr/bin/env python3
"""Dense two-phase primal simplex with Bland's rule.

Variables may carry any bounds; they are substituted onto non-negative
columns before the tableau is built, and rows are equilibrated so that
sensitivity-sized coefficients pivot as cleanly as unit ones.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import NumericalBreakdown, ParseError

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-7
OPTIMALITY_TOL = 1e-9
PIVOT_TOL = 1e-11
NOISE_FLOOR = 1e-3  # fraction of the pivot tolerance treated as round-off

RELATIONS = ("<=", "=", ">=")


class LpStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


@dataclass(frozen=True, eq=False)
class Constraint:
    coefficients: np.ndarray
    relation: str
    rhs: float

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"relation must be one of {RELATIONS}, got {self.relation!r}")
        object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=float))
        object.__setattr__(self, "rhs", float(self.rhs))

    def residual(self, x: np.ndarray) -> float:
        """Signed amount by which ``x`` violates the row (<= 0 when satisfied)."""
        lhs = float(self.coefficients @ x)
        if self.relation == "<=":
            return lhs - self.rhs
        if self.relation == ">=":
            return self.rhs - lhs
        return abs(lhs - self.rhs)


@dataclass(frozen=True, eq=False)
class LinearProgram:
    objective: np.ndarray
    constraints: List[Constraint] = field(default_factory=list)
    bounds: Optional[List[Tuple[float, float]]] = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float)
        object.__setattr__(self, "objective", c)
        if self.bounds is None:
            object.__setattr__(self, "bounds", [(0.0, math.inf)] * len(c))
        if len(self.bounds) != len(c):
            raise ValueError(f"{len(self.bounds)} bounds for {len(c)} variables")
        if not np.all(np.isfinite(c)):
            raise ValueError("objective has non-finite coefficients")
        for k, row in enumerate(self.constraints):
            if row.coefficients.shape != c.shape:
                raise ValueError(f"row {k} has {row.coefficients.size} coefficients, expected {c.size}")
            if not (np.all(np.isfinite(row.coefficients)) and math.isfinite(row.rhs)):
                raise ValueError(f"row {k} has non-finite values")
        for lo, hi in self.bounds:
            if math.isnan(lo) or math.isnan(hi) or lo == math.inf or hi == -math.inf:
                raise ValueError(f"invalid bound pair ({lo}, {hi})")

    @property
    def n_vars(self) -> int:
        return len(self.objective)

    def is_feasible(self, x: np.ndarray, tol: float = FEASIBILITY_TOL) -> bool:
        inside = all(lo - tol <= v <= hi + tol for v, (lo, hi) in zip(x, self.bounds))
        return inside and all(row.residual(x) <= tol for row in self.constraints)


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: LpStatus
    x: Optional[np.ndarray] = None
    objective_value: float = math.nan
    duals: Optional[np.ndarray] = None
    ray: Optional[np.ndarray] = None
    iterations: int = 0


class SimplexSolver:
    def __init__(self, feasibility_tol: float = FEASIBILITY_TOL,
                 optimality_tol: float = OPTIMALITY_TOL, pivot_tol: float = PIVOT_TOL):
        self.feasibility_tol = feasibility_tol
        self.optimality_tol = optimality_tol
        self.pivot_tol = pivot_tol
        self.iterations = 0

    @staticmethod
    def _pivot(T: np.ndarray, row: int, col: int):
        T[row, :] /= T[row, col]
        factors = T[:, col].copy()
        factors[row] = 0.0
        T -= np.outer(factors, T[row, :])

    def _enter(self, reduced: np.ndarray) -> int:
        # Bland: lowest index with a negative reduced cost
        candidates = np.flatnonzero(reduced < -self.optimality_tol)
        return int(candidates[0]) if len(candidates) else -1

    def _leave(self, T: np.ndarray, col: int, basis: List[int]) -> int:
        column = T[:-1, col]
        rows = np.flatnonzero(column > self.pivot_tol)
        if not len(rows):
            # entries under the noise floor count as zero; anything between is unusable
            tiny = np.flatnonzero(column > NOISE_FLOOR * self.pivot_tol)
            if len(tiny):
                raise NumericalBreakdown(
                    f"column {col}: largest pivot candidate {column[tiny].max():.3g} "
                    f"is below the pivot tolerance {self.pivot_tol:g}")
            return -1
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        tied = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        return int(min(tied, key=lambda r: basis[r]))

    def _iterate(self, T: np.ndarray, basis: List[int], n_cols: int) -> Tuple[str, int]:
        cap = 50 * (T.shape[0] + n_cols) + 1000
        for _ in range(cap):
            if not np.all(np.isfinite(T)):
                raise NumericalBreakdown("non-finite value in simplex tableau")
            col = self._enter(T[-1, :n_cols])
            if col < 0:
                return "optimal", -1
            row = self._leave(T, col, basis)
            if row < 0:
                return "unbounded", col
            self._pivot(T, row, col)
            basis[row] = col
            self.iterations += 1
        raise NumericalBreakdown(f"simplex exceeded {cap} pivots")

    def solve(self, lp: LinearProgram) -> LpSolution:
        self.iterations = 0
        n = lp.n_vars

        # x = offset + sub @ x', x' >= 0
        columns: List[Tuple[int, float]] = []
        offset = np.zeros(n)
        bound_rows: List[Tuple[int, float]] = []
        for i, (lo, hi) in enumerate(lp.bounds):
            if lo > hi + self.feasibility_tol:
                return LpSolution(LpStatus.INFEASIBLE)
            if math.isfinite(lo):
                offset[i] = lo
                columns.append((i, 1.0))
                if math.isfinite(hi):
                    bound_rows.append((len(columns) - 1, hi - lo))
            elif math.isfinite(hi):
                offset[i] = hi
                columns.append((i, -1.0))
            else:
                columns.append((i, 1.0))
                columns.append((i, -1.0))
        sub = np.zeros((n, len(columns)))
        for k, (i, sign) in enumerate(columns):
            sub[i, k] = sign
        n_struct = len(columns)

        rows, rhs, relations = [], [], []
        for con in lp.constraints:
            rows.append(con.coefficients @ sub)
            rhs.append(con.rhs - con.coefficients @ offset)
            relations.append(con.relation)
        for k, width in bound_rows:
            row = np.zeros(n_struct)
            row[k] = 1.0
            rows.append(row)
            rhs.append(max(width, 0.0))
            relations.append("<=")
        m = len(rows)
        A = np.array(rows, dtype=float).reshape(m, n_struct)
        b = np.array(rhs, dtype=float)

        scale = np.ones(m)
        for r in range(m):
            peak = np.max(np.abs(A[r])) if n_struct else 0.0
            if peak > 0:
                scale[r] = 1.0 / peak
        A *= scale[:, None]
        b *= scale
        flip = np.where(b < 0, -1.0, 1.0)
        A *= flip[:, None]
        b *= flip
        relations = [
            {"<=": ">=", ">=": "<="}.get(rel, rel) if f < 0 else rel
            for rel, f in zip(relations, flip)
        ]

        n_slack = sum(rel != "=" for rel in relations)
        n_art = sum(rel != "<=" for rel in relations)
        n_real = n_struct + n_slack
        T = np.zeros((m + 1, n_real + n_art + 1))
        T[:m, :n_struct] = A
        T[:m, -1] = b
        basis: List[int] = []
        s = n_struct
        a = n_real
        for r, rel in enumerate(relations):
            if rel == "<=":
                T[r, s] = 1.0
                basis.append(s)
                s += 1
            elif rel == ">=":
                T[r, s] = -1.0
                T[r, a] = 1.0
                basis.append(a)
                s += 1
                a += 1
            else:
                T[r, a] = 1.0
                basis.append(a)
                a += 1
        A_std = T[:m, :n_real].copy()

        # phase 1: minimise the sum of artificials
        T[-1, n_real:n_real + n_art] = 1.0
        for r, var in enumerate(basis):
            if var >= n_real:
                T[-1, :] -= T[r, :]
        self._iterate(T, basis, n_real + n_art)
        if -T[-1, -1] > self.feasibility_tol:
            logger.debug("phase 1 ended at %.3g: infeasible", -T[-1, -1])
            return LpSolution(LpStatus.INFEASIBLE, iterations=self.iterations)

        kept = []
        for r in range(m):
            if basis[r] >= n_real:
                candidates = np.flatnonzero(np.abs(T[r, :n_real]) > self.pivot_tol)
                if not len(candidates):
                    continue
                self._pivot(T, r, int(candidates[0]))
                basis[r] = int(candidates[0])
            kept.append(r)
        T = np.vstack([T[kept][:, list(range(n_real)) + [T.shape[1] - 1]],
                       np.zeros((1, n_real + 1))])
        basis = [basis[r] for r in kept]

        # phase 2
        cost = np.zeros(n_real)
        cost[:n_struct] = lp.objective @ sub
        T[-1, :n_real] = cost
        for r, var in enumerate(basis):
            T[-1, :] -= cost[var] * T[r, :]
        outcome, entering = self._iterate(T, basis, n_real)

        if outcome == "unbounded":
            direction = np.zeros(n_real)
            direction[entering] = 1.0
            for r, var in enumerate(basis):
                direction[var] -= T[r, entering]
            ray = sub @ direction[:n_struct]
            logger.debug("unbounded after %d pivots", self.iterations)
            return LpSolution(LpStatus.UNBOUNDED, ray=ray, iterations=self.iterations)

        values = np.zeros(n_real)
        for r, var in enumerate(basis):
            values[var] = T[r, -1]
        x = offset + sub @ values[:n_struct]
        x = np.array([min(max(v, lo), hi) for v, (lo, hi) in zip(x, lp.bounds)])

        duals_std = np.zeros(m)
        if basis:
            B = A_std[kept][:, basis]
            y, *_ = np.linalg.lstsq(B.T, cost[basis], rcond=None)
            duals_std[kept] = y
        n_con = len(lp.constraints)
        duals = duals_std[:n_con] * flip[:n_con] * scale[:n_con]

        logger.debug("optimal after %d pivots", self.iterations)
        return LpSolution(LpStatus.OPTIMAL, x=x, objective_value=float(lp.objective @ x),
                          duals=duals, iterations=self.iterations)


def solve_lp(lp: LinearProgram) -> LpSolution:
    return SimplexSolver().solve(lp)


def _num(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))


def dump_lp(lp: LinearProgram) -> str:
    """Plain-text form: ``minimize`` / costs / ``subject to`` / rows / ``bounds`` / ``end``."""
    out = ["minimize", " ".join(_num(v) for v in lp.objective), "subject to"]
    for con in lp.constraints:
        out.append(" ".join(_num(v) for v in con.coefficients) + f" {con.relation} {_num(con.rhs)}")
    out.append("bounds")
    for lo, hi in lp.bounds:
        out.append(f"{_num(lo)} {_num(hi)}")
    out.append("end")
    return "\n".join(out) + "\n"


def parse_lp(text: str, path: str = "<lp>") -> LinearProgram:
    lines = [
        (k, ln.strip()) for k, ln in enumerate(text.splitlines(), start=1)
        if ln.strip() and not ln.strip().startswith("#")
    ]

    def fail(msg: str, line: Optional[int] = None):
        raise ParseError(path, msg, line=line)

    if len(lines) < 3 or lines[0][1].lower() != "minimize":
        fail("first line must be 'minimize'", lines[0][0] if lines else None)
    try:
        cost = [float(v) for v in lines[1][1].split()]
    except ValueError:
        fail("bad cost row", lines[1][0])
    if lines[2][1].lower() != "subject to":
        fail("expected 'subject to'", lines[2][0])

    constraints, bounds = [], []
    section = "rows"
    for number, ln in lines[3:]:
        low = ln.lower()
        if low == "end":
            break
        if low == "bounds":
            section = "bounds"
            continue
        try:
            if section == "rows":
                rel = next((r for r in ("<=", ">=", "=") if r in ln), None)
                if rel is None:
                    fail("row must contain <=, >= or =", number)
                left, right = ln.split(rel)
                coefs = [float(v) for v in left.split()]
                if len(coefs) != len(cost):
                    fail(f"row has {len(coefs)} coefficients, expected {len(cost)}", number)
                constraints.append(Constraint(np.array(coefs), rel, float(right)))
            else:
                lo, hi = (float(v) for v in ln.split())
                bounds.append((lo, hi))
        except ValueError as exc:
            fail(str(exc), number)
    else:
        fail("missing 'end'")
    try:
        return LinearProgram(np.array(cost), constraints, bounds or None)
    except ValueError as exc:
        fail(str(exc))


def max_violation(lp: LinearProgram, x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    worst = max((row.residual(x) for row in lp.constraints), default=0.0)
    for v, (lo, hi) in zip(x, lp.bounds):
        worst = max(worst, lo - v, v - hi)
    return float(worst)
