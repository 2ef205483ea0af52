"""Linear programming layer for the relaxations produced by the MIP engine.

Solves min c.x subject to sparse relational rows and variable bounds.
Backed by scipy's HiGHS; tolerances are pinned here (feasibility 1e-7,
reduced cost 1e-9) and reused by the MIP layer.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

__all__ = [
    "Relation",
    "LinearRow",
    "LinearProgram",
    "LpStatus",
    "LpOutcome",
    "LpError",
    "IterationLimitError",
    "solve_lp",
]

FEASIBILITY_TOL = 1e-7
REDUCED_COST_TOL = 1e-9
DEFAULT_PIVOT_LIMIT = 50_000


class LpError(Exception):
    """Malformed input or a numerically failed solve."""


class IterationLimitError(LpError):
    """Pivot cap hit; signals cycling or numerical instability."""


class Relation(str, enum.Enum):
    LE = "<="
    GE = ">="
    EQ = "=="


@dataclass
class LinearRow:
    """coeffs are sparse: {variable index: coefficient}."""

    coeffs: dict[int, float]
    relation: Relation
    rhs: float

    def value(self, x: np.ndarray) -> float:
        return sum(c * x[j] for j, c in self.coeffs.items())

    def satisfied(self, x: np.ndarray, tol: float = FEASIBILITY_TOL) -> bool:
        v = self.value(x)
        if self.relation is Relation.LE:
            return v <= self.rhs + tol
        if self.relation is Relation.GE:
            return v >= self.rhs - tol
        return abs(v - self.rhs) <= tol

    def violation(self, x: np.ndarray) -> float:
        v = self.value(x)
        if self.relation is Relation.LE:
            return max(0.0, v - self.rhs)
        if self.relation is Relation.GE:
            return max(0.0, self.rhs - v)
        return abs(v - self.rhs)


@dataclass
class LinearProgram:
    """Minimization LP: objective, relational rows, and box bounds."""

    objective: np.ndarray
    rows: list[LinearRow] = field(default_factory=list)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = self.objective.size
        if self.lower is None:
            self.lower = np.zeros(n)
        if self.upper is None:
            self.upper = np.full(n, np.inf)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.size != n or self.upper.size != n:
            raise LpError("bound arrays must match objective arity")
        if not np.all(self.lower <= self.upper + 1e-12):
            raise LpError("lower bound exceeds upper bound")
        if not np.all(np.isfinite(self.objective)):
            raise LpError("objective has non-finite coefficients")

    @property
    def num_vars(self) -> int:
        return int(self.objective.size)

    def check_rows(self) -> None:
        n = self.num_vars
        for i, row in enumerate(self.rows):
            for j in row.coeffs:
                if not 0 <= j < n:
                    raise LpError(f"row {i} references variable {j} outside 0..{n - 1}")


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LpOutcome:
    status: LpStatus
    x: np.ndarray | None = None
    objective: float | None = None


def _split_rows(rows: list[LinearRow], n: int):
    """Normalize rows into (A_ub, b_ub, A_eq, b_eq) sparse blocks."""
    ub_data, ub_i, ub_j, b_ub = [], [], [], []
    eq_data, eq_i, eq_j, b_eq = [], [], [], []
    for row in rows:
        if row.relation is Relation.EQ:
            r = len(b_eq)
            for j, c in row.coeffs.items():
                eq_i.append(r)
                eq_j.append(j)
                eq_data.append(c)
            b_eq.append(row.rhs)
        else:
            sgn = 1.0 if row.relation is Relation.LE else -1.0
            r = len(b_ub)
            for j, c in row.coeffs.items():
                ub_i.append(r)
                ub_j.append(j)
                ub_data.append(sgn * c)
            b_ub.append(sgn * row.rhs)
    A_ub = sparse.csr_matrix((ub_data, (ub_i, ub_j)), shape=(len(b_ub), n)) if b_ub else None
    A_eq = sparse.csr_matrix((eq_data, (eq_i, eq_j)), shape=(len(b_eq), n)) if b_eq else None
    return A_ub, (np.array(b_ub) if b_ub else None), A_eq, (np.array(b_eq) if b_eq else None)


class CompiledLp:
    """Pre-split row matrices for repeated solves with varying bounds/cuts.

    The branch-and-bound engine re-solves the same LP hundreds of times
    with only bound overrides and a growing cut pool; splitting the rows
    into sparse blocks once makes each node solve cheap.
    """

    def __init__(self, lp: LinearProgram):
        lp.check_rows()
        self.lp = lp
        self.n = lp.num_vars
        self._base_count = len(lp.rows)
        self._base = _split_rows(lp.rows, self.n)
        self._cut_count = 0
        self._cuts = (None, None, None, None)

    def _with_cuts(self, cuts: list[LinearRow]):
        if len(self.lp.rows) != self._base_count:
            self._base_count = len(self.lp.rows)
            self._base = _split_rows(self.lp.rows, self.n)
        if not cuts:
            return self._base
        if len(cuts) != self._cut_count:
            self._cut_count = len(cuts)
            self._cuts = _split_rows(cuts, self.n)
        A_ub, b_ub, A_eq, b_eq = self._base
        C_ub, c_ub, C_eq, c_eq = self._cuts
        if C_ub is not None:
            A_ub = C_ub if A_ub is None else sparse.vstack([A_ub, C_ub], format="csr")
            b_ub = c_ub if b_ub is None else np.concatenate([b_ub, c_ub])
        if C_eq is not None:
            A_eq = C_eq if A_eq is None else sparse.vstack([A_eq, C_eq], format="csr")
            b_eq = c_eq if b_eq is None else np.concatenate([b_eq, c_eq])
        return A_ub, b_ub, A_eq, b_eq

    def solve(
        self,
        cuts: list[LinearRow] | None = None,
        lower: np.ndarray | None = None,
        upper: np.ndarray | None = None,
        max_iterations: int = DEFAULT_PIVOT_LIMIT,
    ) -> LpOutcome:
        lo = self.lp.lower if lower is None else lower
        hi = self.lp.upper if upper is None else upper
        if np.any(lo > hi + 1e-12):
            return LpOutcome(LpStatus.INFEASIBLE)
        A_ub, b_ub, A_eq, b_eq = self._with_cuts(cuts or [])
        res = linprog(
            c=self.lp.objective,
            A_ub=A_ub,
            b_ub=b_ub,
            A_eq=A_eq,
            b_eq=b_eq,
            bounds=np.column_stack([lo, hi]),
            method="highs",
            options={
                "presolve": True,
                "maxiter": max_iterations,
                "primal_feasibility_tolerance": FEASIBILITY_TOL,
                "dual_feasibility_tolerance": REDUCED_COST_TOL,
            },
        )
        if res.status == 1:
            raise IterationLimitError(f"LP hit the {max_iterations}-pivot cap")
        if res.status == 2:
            return LpOutcome(LpStatus.INFEASIBLE)
        if res.status == 3:
            return LpOutcome(LpStatus.UNBOUNDED)
        if res.status != 0:
            raise LpError(f"LP solve failed numerically: {res.message}")
        x = np.asarray(res.x, dtype=float)
        return LpOutcome(LpStatus.OPTIMAL, x=x, objective=float(self.lp.objective @ x))


def solve_lp(
    lp: LinearProgram,
    extra_rows: list[LinearRow] | None = None,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
    max_iterations: int = DEFAULT_PIVOT_LIMIT,
) -> LpOutcome:
    """Solve the LP (optionally with appended rows / overridden bounds).

    Deterministic for identical input. Raises IterationLimitError if the
    pivot cap is exhausted; returns INFEASIBLE/UNBOUNDED statuses otherwise.
    """
    return CompiledLp(lp).solve(cuts=extra_rows, lower=lower, upper=upper,
                                max_iterations=max_iterations)
