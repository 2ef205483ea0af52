"""Branch-and-bound over the LP layer with lazy-cut callback hooks.

The engine is a plain LIFO depth-first search with:
  * most-fractional branching, ties broken by lowest variable index,
  * a global cut pool populated by the callback on integral candidates,
  * objective pruning against the best *true* incumbent value, which the
    callback may supply when the LP objective is only a surrogate (the
    recourse layer prunes with f+theta >= f*+g*).

Single-threaded; an engine invocation owns its problem.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from .lp import CompiledLp, LinearProgram, LinearRow, LpStatus

__all__ = [
    "MipProblem",
    "MipStatus",
    "MipSolution",
    "CutDecision",
    "MipError",
    "BranchError",
    "Node",
    "branch",
    "solve_mip",
]

INTEGRALITY_TOL = 1e-6
PRUNE_TOL = 1e-7
ROW_TOL = 1e-6


class MipError(Exception):
    pass


class BranchError(MipError):
    """Branching requested on a variable that is already integral."""


@dataclass
class MipProblem:
    """LP core plus integrality markers and search configuration."""

    lp: LinearProgram
    integer_vars: list[int]
    c_large: float = 1.0
    time_limit: float | None = 500.0
    cut_pool: list[LinearRow] = field(default_factory=list)
    # optional warm start: (assignment, true objective value)
    incumbent: tuple[np.ndarray, float] | None = None
    check_cuts: bool = False  # debug: verify returned cuts are violated

    def __post_init__(self):
        if self.c_large <= 0:
            raise MipError(f"c_large must be positive, got {self.c_large}")
        n = self.lp.num_vars
        for j in self.integer_vars:
            if not 0 <= j < n:
                raise MipError(f"integrality marker on unknown variable {j}")


class MipStatus(enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE_LIMIT = "feasible-limit-hit"
    INFEASIBLE = "infeasible"


@dataclass
class MipSolution:
    status: MipStatus
    values: np.ndarray | None
    objective: float | None
    node_count: int
    elapsed: float
    cut_count: int = 0


@dataclass
class CutDecision:
    """Returned by a cut callback for an integral relaxation solution.

    Empty `cuts` means the solution is accepted as feasible. A non-None
    `incumbent_value` reports the candidate's true objective (used for
    incumbent bookkeeping and pruning even when cuts are also returned).
    """

    cuts: list[LinearRow] = field(default_factory=list)
    incumbent_value: float | None = None


@dataclass
class Node:
    """Bound overrides relative to the root problem."""

    lower: dict[int, float] = field(default_factory=dict)
    upper: dict[int, float] = field(default_factory=dict)
    depth: int = 0


def _fractional_var(x: np.ndarray, integer_vars: list[int]) -> int | None:
    """Most-fractional integer variable, lowest index on ties."""
    best_j, best_frac = None, INTEGRALITY_TOL
    for j in integer_vars:
        frac = abs(x[j] - round(x[j]))
        if frac > best_frac + 1e-12:
            best_j, best_frac = j, frac
    return best_j


def branch(node: Node, var: int, value: float) -> tuple[Node, Node]:
    """Split on `var` at fractional `value` into floor/ceil children."""
    if abs(value - round(value)) <= INTEGRALITY_TOL:
        raise BranchError(f"variable {var} is integral at {value}")
    down = Node(dict(node.lower), dict(node.upper), node.depth + 1)
    up = Node(dict(node.lower), dict(node.upper), node.depth + 1)
    down.upper[var] = float(np.floor(value))
    up.lower[var] = float(np.ceil(value))
    return down, up


def _node_bounds(problem: MipProblem, node: Node):
    lo = problem.lp.lower.copy()
    hi = problem.lp.upper.copy()
    for j, v in node.lower.items():
        lo[j] = max(lo[j], v)
    for j, v in node.upper.items():
        hi[j] = min(hi[j], v)
    return lo, hi


def _accept_all(_x: np.ndarray) -> CutDecision:
    return CutDecision()


def solve_mip(problem: MipProblem, callback=None) -> MipSolution:
    """Exact branch and cut, assuming the callback only returns valid cuts.

    The search is depth-first (LIFO); on branching the ceil child is dived
    first (forcing a selection in makes far faster progress toward integral
    routing structure than forbidding a fractional edge). Nodes whose
    relaxation objective ties or exceeds the incumbent's true value are
    pruned.
    """
    if callback is None:
        callback = _accept_all
    t0 = time.monotonic()
    deadline = None if problem.time_limit is None else t0 + problem.time_limit

    best_x: np.ndarray | None = None
    best_val = np.inf
    if problem.incumbent is not None:
        best_x = np.asarray(problem.incumbent[0], dtype=float).copy()
        best_val = float(problem.incumbent[1])

    compiled = CompiledLp(problem.lp)
    stack = [Node()]
    nodes = 0
    timed_out = False

    while stack:
        if deadline is not None and time.monotonic() > deadline:
            timed_out = True
            break
        node = stack.pop()
        nodes += 1
        lo, hi = _node_bounds(problem, node)
        while True:  # cut-and-resolve loop on this node
            out = compiled.solve(cuts=problem.cut_pool, lower=lo, upper=hi)
            if out.status is LpStatus.INFEASIBLE:
                break
            if out.status is LpStatus.UNBOUNDED:
                raise MipError("relaxation is unbounded; model is malformed")
            if out.objective >= best_val - PRUNE_TOL:
                break
            frac = _fractional_var(out.x, problem.integer_vars)
            if frac is not None:
                down, up = branch(node, frac, out.x[frac])
                stack.append(down)
                stack.append(up)  # LIFO: dive the ceil child first
                break
            x = out.x
            decision = callback(x)
            if problem.check_cuts:
                for cut in decision.cuts:
                    if cut.violation(x) <= 0.0:
                        raise MipError("callback returned a cut not violated by the trigger")
            if decision.incumbent_value is not None and decision.incumbent_value < best_val:
                best_val = decision.incumbent_value
                best_x = x.copy()
            if decision.cuts:
                problem.cut_pool.extend(decision.cuts)
                continue  # re-solve this node against the grown pool
            if decision.incumbent_value is None and out.objective < best_val:
                best_val = out.objective
                best_x = x.copy()
            break

    elapsed = time.monotonic() - t0
    if timed_out:
        return MipSolution(MipStatus.FEASIBLE_LIMIT, best_x, best_val if best_x is not None else None,
                           nodes, elapsed, len(problem.cut_pool))
    if best_x is None:
        return MipSolution(MipStatus.INFEASIBLE, None, None, nodes, elapsed, len(problem.cut_pool))
    return MipSolution(MipStatus.OPTIMAL, best_x, best_val, nodes, elapsed, len(problem.cut_pool))
