"""Chance-constraint and recourse layers on top of the MILP engine.

Three drivers share one report shape:
  * solve_deterministic — expected-energy model as built by `model`.
  * solve_ccp — iterative master/check/cut loop: solve the MILP, test each
    vehicle's route against the Gaussian energy chance constraint, exclude
    violating routes with linear feasibility cuts, repeat.
  * solve_spr — branch and cut with per-vehicle recourse lower-bound
    variables tightened by optimality cuts until they dominate the true
    expected recourse cost.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .lp import LinearProgram, LinearRow, LpStatus, Relation, solve_lp
from .mip import CutDecision, MipStatus, solve_mip
from .model import (
    Plan,
    ProblemInstance,
    VariableIndex,
    build_milp,
    encode_plan,
    extract_plan,
    route_from_edges,
)
from .numerics import GaussianScalar, exceed_probability, std_normal_quantile

__all__ = [
    "RouteCostSummary",
    "RecourseQuote",
    "SolveStatus",
    "VehicleReport",
    "SolveReport",
    "route_cost_summary",
    "ccp_check",
    "ccp_feasibility_cut",
    "recourse_cost",
    "optimality_cut",
    "solve_deterministic",
    "solve_ccp",
    "solve_spr",
]

CHANCE_TOL = 1e-9
THETA_TOL = 1e-9


@dataclass(frozen=True)
class RouteCostSummary:
    """Per-vehicle Gaussian total over the selected edges (mean, variance)."""

    mean_total: float
    variance_total: float


@dataclass
class RecourseQuote:
    """Expected recourse cost of one vehicle's route.

    failures lists (target node, failure ordinal l, probability, unit cost);
    probabilities use the marginal difference-of-tails convention with
    clamping at zero.
    """

    g: float
    failures: list[tuple[int, int, float, float]] = field(default_factory=list)


def route_cost_summary(inst: ProblemInstance, plan: Plan, k: int) -> RouteCostSummary:
    mean = var = 0.0
    for (i, j) in plan.route_edges(k):
        g = inst.gaussian(k, i, j)
        mean += g.mean
        var += g.variance
    return RouteCostSummary(mean, var)


def chance_margin(inst: ProblemInstance, plan: Plan, k: int) -> float:
    """quantile(beta)*sqrt(V) + M - B; positive means the constraint fails."""
    s = route_cost_summary(inst, plan, k)
    v = inst.vehicles[k]
    return std_normal_quantile(v.beta) * math.sqrt(s.variance_total) + s.mean_total - v.energy_capacity


def ccp_check(inst: ProblemInstance, plan: Plan) -> list[int]:
    """Vehicles whose routes violate the energy chance constraint."""
    return [k for k in range(inst.n_v)
            if plan.routes.get(k) and chance_margin(inst, plan, k) > CHANCE_TOL]


def ccp_feasibility_cut(
    inst: ProblemInstance,
    index: VariableIndex,
    k: int,
    values: np.ndarray,
) -> tuple[LinearRow, bool]:
    """Exclude vehicle k's current route: at least one of its task-to-task
    edges must flip. Routes with no interior edge fall back to a cut over
    all selected edges (including start/terminal ones); the bool flags that
    fallback for the report."""
    selected = index.selected_edges(values, k)
    interior = [(i, j) for (i, j) in selected
                if inst.is_task_node(i) and inst.is_task_node(j)]
    fallback = not interior
    edges = selected if fallback else interior
    if not edges:
        raise ValueError(f"vehicle {k} has no selected edges to cut")
    coeffs = {index.x[(k, i, j)]: 1.0 for (i, j) in edges}
    return LinearRow(coeffs, Relation.LE, float(len(edges) - 1)), fallback


def recourse_cost(inst: ProblemInstance, route: list[int], k: int) -> RecourseQuote:
    """Expected cost of rescue + same-type replacement over a route.

    The l-th failure lands on the edge into route[p] with probability
    P(S_p > l*B) - P(S_{p-1} > l*B) (clamped at 0), where S_p is the
    Gaussian sum of the first p edge costs, start edge included. Each
    failure pays the replacement's start->target mean plus the rescue
    round trip, scaled by the penalty coefficient.
    """
    if not route:
        return RecourseQuote(0.0)
    if inst.rescue is None:
        raise ValueError("recourse cost requires the rescue-vehicle cost table")
    vehicle = inst.vehicles[k]
    budget = vehicle.energy_capacity
    s_k = inst.start_node(k)
    cum = GaussianScalar(0.0, 0.0)
    prev_tail: dict[int, float] = {}
    g_total = 0.0
    failures = []
    for p in range(1, len(route)):
        i, j = route[p - 1], route[p]
        cum = cum + inst.gaussian(k, i, j)
        target = route[p]
        if target not in inst.rescue.to_node or target not in inst.rescue.back_node:
            raise ValueError(f"rescue table misses node {inst.node_name(target)}")
        if (k, s_k, target) not in inst.edge_costs:
            raise ValueError(
                f"missing replacement cost ({k}, {inst.node_name(s_k)}, {inst.node_name(target)})")
        unit = (inst.mean(k, s_k, target)
                + inst.rescue.to_node[target] + inst.rescue.back_node[target])
        for ell in range(1, p + 1):
            tail = exceed_probability(ell * budget, cum)
            prob = max(0.0, tail - prev_tail.get(ell, 0.0))
            prev_tail[ell] = tail
            if prob > 0.0:
                g_total += inst.c_g * prob * unit
                failures.append((target, ell, prob, unit))
    return RecourseQuote(g_total, failures)


def optimality_cut(
    index: VariableIndex,
    k: int,
    selected: list[tuple[int, int]],
    g_k: float,
) -> LinearRow:
    """theta_k >= g_k * (1 - n + sum of the route's x): binding exactly when
    every currently selected edge of vehicle k is selected again."""
    n = len(selected)
    coeffs = {index.theta[k]: 1.0}
    for (i, j) in selected:
        coeffs[index.x[(k, i, j)]] = -g_k
    return LinearRow(coeffs, Relation.GE, g_k * (1.0 - n))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE_LIMIT = "time-limit-with-incumbent"
    UNRESOLVED_LIMIT = "time-limit-no-solution"
    INFEASIBLE = "infeasible"


@dataclass
class VehicleReport:
    vehicle: int
    route: list[int]
    mean_total: float
    variance_total: float
    chance_margin: float
    g: float


@dataclass
class SolveReport:
    model: str
    status: SolveStatus
    plan: Plan | None
    f: float | None            # energy + time penalty
    g: float | None            # expected recourse of the plan (when computable)
    vehicles: list[VehicleReport] = field(default_factory=list)
    node_count: int = 0
    cut_count: int = 0
    iterations: int = 1
    wall_time: float = 0.0
    notes: list[str] = field(default_factory=list)

    @property
    def objective(self) -> float | None:
        if self.f is None:
            return None
        return self.f + (self.g or 0.0)

    def to_dict(self, inst: ProblemInstance) -> dict:
        from .model import plan_to_dict

        return {
            "model": self.model,
            "status": self.status.value,
            "f": self.f,
            "g": self.g,
            "objective": self.objective,
            "energy": None if self.plan is None else self.plan.energy_cost,
            "time_penalty": None if self.plan is None else self.plan.time_penalty,
            "vehicles": [
                {"vehicle": v.vehicle, "route": [inst.node_name(n) for n in v.route],
                 "mean_total": v.mean_total, "variance_total": v.variance_total,
                 "chance_margin": v.chance_margin, "g": v.g}
                for v in self.vehicles
            ],
            "node_count": self.node_count,
            "cut_count": self.cut_count,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "notes": self.notes,
            "plan": None if self.plan is None else plan_to_dict(inst, self.plan),
        }


def _vehicle_reports(inst: ProblemInstance, plan: Plan) -> tuple[list[VehicleReport], float | None]:
    reports = []
    total_g: float | None = 0.0 if inst.rescue is not None else None
    for k in range(inst.n_v):
        s = route_cost_summary(inst, plan, k)
        margin = chance_margin(inst, plan, k) if plan.routes.get(k) else -inst.vehicles[k].energy_capacity
        g_k = 0.0
        if inst.rescue is not None:
            g_k = recourse_cost(inst, plan.routes.get(k, []), k).g
            total_g += g_k
        reports.append(VehicleReport(k, plan.routes.get(k, []), s.mean_total,
                                     s.variance_total, margin, g_k))
    return reports, total_g


def _finish(model_name, inst, status, plan, nodes, cuts, iterations, t0, notes):
    if plan is None:
        return SolveReport(model_name, status, None, None, None, [], nodes, cuts,
                           iterations, time.monotonic() - t0, notes)
    vehicles, total_g = _vehicle_reports(inst, plan)
    if total_g is not None:
        plan.recourse_cost = total_g
    return SolveReport(model_name, status, plan, plan.linear_objective, total_g,
                       vehicles, nodes, cuts, iterations, time.monotonic() - t0, notes)


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def solve_deterministic(
    inst: ProblemInstance,
    time_limit: float | None = 500.0,
    symmetry_rows: bool = True,
) -> SolveReport:
    t0 = time.monotonic()
    problem, index = build_milp(inst, energy_rows=True, time_limit=time_limit,
                                symmetry_rows=symmetry_rows)
    sol = solve_mip(problem)
    if sol.values is None:
        status = SolveStatus.INFEASIBLE if sol.status is MipStatus.INFEASIBLE else SolveStatus.UNRESOLVED_LIMIT
        return _finish("deterministic", inst, status, None, sol.node_count, 0, 1, t0, [])
    plan = extract_plan(inst, index, sol.values)
    status = SolveStatus.OPTIMAL if sol.status is MipStatus.OPTIMAL else SolveStatus.FEASIBLE_LIMIT
    return _finish("deterministic", inst, status, plan, sol.node_count, 0, 1, t0, [])


def _energy_row(inst: ProblemInstance, index: VariableIndex, k: int) -> LinearRow:
    coeffs = {index.x[(k, i, j)]: inst.mean(k, i, j) for (i, j) in inst.routing_edges(k)}
    return LinearRow(coeffs, Relation.LE, inst.vehicles[k].energy_capacity)


def _max_route_variance(inst: ProblemInstance, k: int) -> float:
    """Upper bound on a feasible route's total variance for vehicle k.

    LP relaxation of: maximize sum(sigma2_e x_e) subject to the expected
    energy cap and at most n_m + 1 edges. Any actual route satisfies both,
    so its variance cannot exceed this value.
    """
    edges = inst.routing_edges(k)
    sigma2 = np.array([inst.gaussian(k, i, j).variance for (i, j) in edges])
    mu = np.array([inst.mean(k, i, j) for (i, j) in edges])
    if sigma2.sum() <= 0.0:
        return 0.0
    lp = LinearProgram(
        objective=-sigma2,
        rows=[
            LinearRow({e: float(mu[e]) for e in range(len(edges))}, Relation.LE,
                      inst.vehicles[k].energy_capacity),
            LinearRow({e: 1.0 for e in range(len(edges))}, Relation.LE, float(inst.n_m + 1)),
        ],
        lower=np.zeros(len(edges)),
        upper=np.ones(len(edges)),
    )
    out = solve_lp(lp)
    if out.status is not LpStatus.OPTIMAL:
        return float(sigma2.sum())
    return max(0.0, -out.objective)


def solve_ccp(
    inst: ProblemInstance,
    time_limit: float | None = 500.0,
    symmetry_rows: bool = True,
    warm_plan: Plan | None = None,
) -> SolveReport:
    """Branch and cut for the chance-constrained model.

    One tree: every integral candidate is checked against the Gaussian
    energy chance constraint; violating vehicles' routes are excluded with
    lazy feasibility cuts and the node re-solves. The master drops the
    plain expected-energy rows (the chance constraint replaces them) except
    for vehicles with beta >= 0.5, where the deterministic row is a valid
    relaxation of the chance row and tightens the search. A warm plan that
    already passes ccp_check seeds the incumbent bound.
    """
    t0 = time.monotonic()
    notes: list[str] = []
    problem, index = build_milp(inst, energy_rows=False, time_limit=time_limit,
                                symmetry_rows=symmetry_rows)
    quantile_by_vehicle = [std_normal_quantile(v.beta) for v in inst.vehicles]
    for k in range(inst.n_v):
        if inst.vehicles[k].beta >= 0.5:
            problem.lp.rows.append(_energy_row(inst, index, k))
            # secant relaxation of the chance row: any feasible route's
            # variance V is bounded by the knapsack relaxation below, and
            # sqrt(V) >= V / sqrt(V_max) on [0, V_max], so the linear row
            # sum((mu_e + q*sigma2_e/sqrt(V_max)) x_e) <= B is valid
            q_k = quantile_by_vehicle[k]
            v_max = _max_route_variance(inst, k)
            if q_k > 0.0 and v_max > 0.0:
                rate = q_k / math.sqrt(v_max)
                coeffs = {index.x[(k, i, j)]: inst.mean(k, i, j) + rate * inst.gaussian(k, i, j).variance
                          for (i, j) in inst.routing_edges(k)}
                problem.lp.rows.append(
                    LinearRow(coeffs, Relation.LE, inst.vehicles[k].energy_capacity))

    if warm_plan is not None and not ccp_check(inst, warm_plan) and not check_any_problem(inst, warm_plan):
        problem.incumbent = (encode_plan(inst, index, warm_plan), warm_plan.linear_objective)
        notes.append("warm-started from a chance-feasible plan")

    quantiles = quantile_by_vehicle

    def callback(values: np.ndarray) -> CutDecision:
        decision = CutDecision()
        for k in range(inst.n_v):
            selected = index.selected_edges(values, k)
            if not selected:
                continue
            mean = var = 0.0
            for (i, j) in selected:
                g = inst.gaussian(k, i, j)
                mean += g.mean
                var += g.variance
            if quantiles[k] * math.sqrt(var) + mean > inst.vehicles[k].energy_capacity + CHANCE_TOL:
                row, used_fallback = ccp_feasibility_cut(inst, index, k, values)
                decision.cuts.append(row)
                if used_fallback:
                    notes.append(f"fallback cut over all selected edges of vehicle {k}")
        return decision

    sol = solve_mip(problem, callback)
    if sol.values is None:
        status = SolveStatus.INFEASIBLE if sol.status is MipStatus.INFEASIBLE else SolveStatus.UNRESOLVED_LIMIT
        if sol.status is MipStatus.INFEASIBLE:
            notes.append("cut family exhausted feasibility")
        return _finish("ccp", inst, status, None, sol.node_count, sol.cut_count, 1, t0, notes)
    plan = extract_plan(inst, index, sol.values)
    status = SolveStatus.OPTIMAL if sol.status is MipStatus.OPTIMAL else SolveStatus.FEASIBLE_LIMIT
    return _finish("ccp", inst, status, plan, sol.node_count, sol.cut_count, 1, t0, notes)


def check_any_problem(inst: ProblemInstance, plan: Plan) -> bool:
    from .model import check_plan

    return bool(check_plan(inst, plan, check_requirements=True, check_energy=False))


def solve_spr(
    inst: ProblemInstance,
    time_limit: float | None = 500.0,
    symmetry_rows: bool = True,
    warm_plan: Plan | None = None,
) -> SolveReport:
    """Branch and cut for the recourse model.

    Per-vehicle lower-bound variables theta ride in the objective; every
    integral candidate prices its true expected recourse, improves the
    incumbent on f+g, and either passes (theta >= g) or receives optimality
    cuts for the vehicles whose theta undershoots. The deterministic energy
    rows stay in the model.
    """
    t0 = time.monotonic()
    if inst.rescue is None:
        raise ValueError("the recourse model needs the rescue-vehicle cost table")
    notes: list[str] = []
    problem, index = build_milp(inst, energy_rows=True, recourse_vars=True,
                                time_limit=time_limit, symmetry_rows=symmetry_rows)
    lp_objective = problem.lp.objective
    theta_cols = np.array([index.theta[k] for k in range(inst.n_v)], dtype=int)

    if warm_plan is not None and not check_any_problem(inst, warm_plan):
        quotes = {k: recourse_cost(inst, warm_plan.routes.get(k, []), k).g for k in range(inst.n_v)}
        warm_value = warm_plan.linear_objective + sum(quotes.values())
        problem.incumbent = (encode_plan(inst, index, warm_plan, theta=quotes), warm_value)
        notes.append("warm-started from a feasible plan")

    def callback(values: np.ndarray) -> CutDecision:
        theta_vals = values[theta_cols]
        f_val = float(lp_objective @ values) - float(theta_vals.sum())
        g_vals = np.zeros(inst.n_v)
        selections = {}
        for k in range(inst.n_v):
            selected = index.selected_edges(values, k)
            selections[k] = selected
            route = route_from_edges(inst, k, selected)
            g_vals[k] = recourse_cost(inst, route, k).g
        decision = CutDecision(incumbent_value=f_val + float(g_vals.sum()))
        if float(theta_vals.sum()) >= float(g_vals.sum()) - THETA_TOL:
            return decision
        for k in range(inst.n_v):
            if selections[k] and theta_vals[k] < g_vals[k] - THETA_TOL:
                decision.cuts.append(optimality_cut(index, k, selections[k], float(g_vals[k])))
        return decision

    sol = solve_mip(problem, callback)
    nodes, cuts = sol.node_count, sol.cut_count
    if sol.values is None:
        status = SolveStatus.INFEASIBLE if sol.status is MipStatus.INFEASIBLE else SolveStatus.UNRESOLVED_LIMIT
        return _finish("spr", inst, status, None, nodes, cuts, 1, t0, notes)
    plan = extract_plan(inst, index, sol.values)
    status = SolveStatus.OPTIMAL if sol.status is MipStatus.OPTIMAL else SolveStatus.FEASIBLE_LIMIT
    return _finish("spr", inst, status, plan, nodes, cuts, 1, t0, notes)
