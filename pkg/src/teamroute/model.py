"""Problem instance definition and MILP construction.

Node convention: task i is node i (0 <= i < n_m), vehicle k's start node is
n_m + k and its terminal node is n_m + n_v + k. A vehicle's routing edges are
start->task, task->terminal, and all ordered task pairs; there is no
start->terminal edge (an unused vehicle simply selects nothing).

The edge-cost table may also carry *support* entries that are not routing
edges (currently (k, start_k, terminal_k), used by the recourse layer for
the replacement-vehicle cost when a failure happens on the final edge).
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .lp import LinearProgram, LinearRow, Relation
from .mip import MipProblem
from .numerics import GaussianScalar

__all__ = [
    "Capability",
    "Vehicle",
    "Atom",
    "AllOf",
    "AnyOf",
    "Task",
    "RescueVehicle",
    "ProblemInstance",
    "ValidationError",
    "PlanDecodeError",
    "VariableIndex",
    "Plan",
    "build_deterministic",
    "build_milp",
    "linearize_requirement",
    "extract_plan",
    "check_plan",
    "instance_to_json",
    "instance_from_json",
    "plan_to_dict",
]

PLAN_TOL = 1e-6


class ValidationError(Exception):
    """Raised with the full list of problems found in an instance/build."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class PlanDecodeError(Exception):
    """x does not encode one simple path per vehicle (solver bug)."""


# ---------------------------------------------------------------------------
# requirement expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    """Threshold atom over a team's summed capability.

    `at_most=False` reads "alpha_cap >= threshold", at_most=True mirrors it.
    """

    capability: int
    threshold: float = 1.0
    at_most: bool = False

    def evaluate(self, alpha) -> bool:
        a = alpha[self.capability]
        return a <= self.threshold if self.at_most else a >= self.threshold


@dataclass(frozen=True)
class AllOf:
    children: tuple = ()

    def evaluate(self, alpha) -> bool:
        return all(c.evaluate(alpha) for c in self.children)


@dataclass(frozen=True)
class AnyOf:
    children: tuple = ()

    def evaluate(self, alpha) -> bool:
        return any(c.evaluate(alpha) for c in self.children)


def _flatten(node):
    """Merge same-operator nests so only alternating AND/OR levels remain."""
    if isinstance(node, Atom):
        return node
    kind = type(node)
    kids = []
    for c in node.children:
        c = _flatten(c)
        if type(c) is kind:
            kids.extend(c.children)
        else:
            kids.append(c)
    if len(kids) == 1:
        return kids[0]
    return kind(tuple(kids))


def _walk_atoms(node):
    if isinstance(node, Atom):
        yield node
        return
    for c in node.children:
        yield from _walk_atoms(c)


def validate_requirement(req, n_capabilities: int, where: str, problems: list[str]) -> None:
    if not isinstance(req, (Atom, AllOf, AnyOf)):
        problems.append(f"{where}: unsupported requirement node {type(req).__name__}")
        return
    for atom in _walk_atoms(req):
        if not 0 <= atom.capability < n_capabilities:
            problems.append(f"{where}: atom references unknown capability {atom.capability}")
        if not atom.at_most and atom.threshold <= 0:
            problems.append(f"{where}: '>=' atom needs a positive threshold, got {atom.threshold}")
        if atom.at_most and atom.threshold < 0:
            problems.append(f"{where}: '<=' atom needs a nonnegative threshold")
    if isinstance(req, (AllOf, AnyOf)) and not list(_walk_atoms(req)):
        problems.append(f"{where}: requirement has no atoms")


# ---------------------------------------------------------------------------
# instance types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Capability:
    id: int
    name: str


@dataclass
class Vehicle:
    id: int
    type_label: str
    capabilities: tuple[float, ...]
    energy_capacity: float
    beta: float = 0.95
    start_location: tuple[float, float] | None = None
    terminal_location: tuple[float, float] | None = None


@dataclass
class Task:
    id: int
    location: tuple[float, float] | None
    requirement: object
    service_times: dict[int, float] = field(default_factory=dict)


@dataclass
class RescueVehicle:
    """Distinguished 'vehicle 0' used only for recourse cost bookkeeping."""

    location: tuple[float, float] | None
    to_node: dict[int, float] = field(default_factory=dict)    # mean, start -> node
    back_node: dict[int, float] = field(default_factory=dict)  # mean, node -> terminal


@dataclass
class ProblemInstance:
    capabilities: list[Capability]
    vehicles: list[Vehicle]
    tasks: list[Task]
    edge_costs: dict[tuple[int, int, int], GaussianScalar]
    travel_times: dict[tuple[int, int, int], float]
    rescue: RescueVehicle | None = None
    c_q: float = 1.0
    c_g: float = 1.0
    c_large_time: float | None = None
    meta: dict = field(default_factory=dict)

    # -- node helpers ---------------------------------------------------
    @property
    def n_m(self) -> int:
        return len(self.tasks)

    @property
    def n_v(self) -> int:
        return len(self.vehicles)

    def task_node(self, i: int) -> int:
        return i

    def start_node(self, k: int) -> int:
        return self.n_m + k

    def terminal_node(self, k: int) -> int:
        return self.n_m + self.n_v + k

    def is_task_node(self, node: int) -> bool:
        return node < self.n_m

    def node_name(self, node: int) -> str:
        if node < self.n_m:
            return f"m{node}"
        if node < self.n_m + self.n_v:
            return f"s{node - self.n_m}"
        return f"u{node - self.n_m - self.n_v}"

    def node_from_name(self, name: str) -> int:
        idx = int(name[1:])
        if name[0] == "m":
            return idx
        if name[0] == "s":
            return self.start_node(idx)
        if name[0] == "u":
            return self.terminal_node(idx)
        raise ValueError(f"bad node name {name!r}")

    def routing_edges(self, k: int) -> list[tuple[int, int]]:
        """Vehicle k's edge set, in deterministic order."""
        s, u = self.start_node(k), self.terminal_node(k)
        tasks = range(self.n_m)
        edges = [(s, m) for m in tasks]
        edges += [(m, u) for m in tasks]
        edges += [(i, j) for i in tasks for j in tasks if i != j]
        return edges

    def mean(self, k: int, i: int, j: int) -> float:
        return self.edge_costs[(k, i, j)].mean

    def gaussian(self, k: int, i: int, j: int) -> GaussianScalar:
        return self.edge_costs[(k, i, j)]

    def service_time(self, k: int, node: int) -> float:
        if self.is_task_node(node):
            return self.tasks[node].service_times.get(k, 0.0)
        return 0.0

    def horizon_estimate(self) -> float:
        """Upper bound on any minimal-schedule start time."""
        max_travel = max((t for t in self.travel_times.values()), default=0.0)
        max_service = sum(
            max((t.service_times.get(v.id, 0.0) for v in self.vehicles), default=0.0)
            for t in self.tasks
        )
        return max_service + (self.n_m + 1) * max_travel + 1.0

    def time_big_m(self) -> float:
        """Uniform big-M override for the schedule rows, if configured."""
        if self.c_large_time is not None:
            return self.c_large_time
        return 10.0 * self.horizon_estimate()

    def requirement_big_m(self) -> float:
        """1 + sum over vehicles of their largest capability entry."""
        return 1.0 + sum(max(v.capabilities, default=0.0) for v in self.vehicles)


def validate_instance(inst: ProblemInstance) -> None:
    problems: list[str] = []
    n_a = len(inst.capabilities)
    for a, cap in enumerate(inst.capabilities):
        if cap.id != a:
            problems.append(f"capability ids must be dense 0..n_a-1; slot {a} has id {cap.id}")
    for k, v in enumerate(inst.vehicles):
        if v.id != k:
            problems.append(f"vehicle ids must be dense; slot {k} has id {v.id}")
        if len(v.capabilities) != n_a:
            problems.append(f"vehicle {k}: capability vector has arity {len(v.capabilities)} != {n_a}")
        if any(c < 0 for c in v.capabilities):
            problems.append(f"vehicle {k}: negative capability entry")
        if not v.energy_capacity > 0:
            problems.append(f"vehicle {k}: energy capacity must be positive")
        if not 0.0 < v.beta < 1.0:
            problems.append(f"vehicle {k}: beta must lie in (0,1), got {v.beta}")
    for i, t in enumerate(inst.tasks):
        if t.id != i:
            problems.append(f"task ids must be dense; slot {i} has id {t.id}")
        validate_requirement(t.requirement, n_a, f"task {i}", problems)
        for k, st in t.service_times.items():
            if st < 0:
                problems.append(f"task {i}: negative service time for vehicle {k}")
    for k in range(inst.n_v):
        for (i, j) in inst.routing_edges(k):
            if (k, i, j) not in inst.edge_costs:
                problems.append(f"missing edge cost ({k}, {inst.node_name(i)}, {inst.node_name(j)})")
            if (k, i, j) not in inst.travel_times:
                problems.append(f"missing travel time ({k}, {inst.node_name(i)}, {inst.node_name(j)})")
    for (k, i, j), g in inst.edge_costs.items():
        if g.mean < 0:
            problems.append(f"edge ({k},{i},{j}) has negative mean cost")
        if i == j:
            problems.append(f"self-loop edge cost ({k},{i},{j}) is not allowed")
    if problems:
        raise ValidationError(problems)


# ---------------------------------------------------------------------------
# variable indexing
# ---------------------------------------------------------------------------

class VariableIndex:
    """Bijections between model symbols and flat LP column indices."""

    def __init__(self, inst: ProblemInstance, with_recourse: bool = False):
        self.inst = inst
        self.with_recourse = with_recourse
        self.x: dict[tuple[int, int, int], int] = {}
        self.y: dict[tuple[int, int], int] = {}
        self.z: dict[int, int] = {}
        self.q: dict[int, int] = {}
        self.w: dict[tuple[int, int], int] = {}      # (task, leaf ordinal)
        self.w_by_cap: dict[tuple[int, int], int] = {}  # (task, capability) when unique
        self.aux: dict[tuple[int, int], int] = {}    # (task, internal ordinal)
        self.theta: dict[int, int] = {}
        n = 0
        for k in range(inst.n_v):
            for (i, j) in inst.routing_edges(k):
                self.x[(k, i, j)] = n
                n += 1
        for k in range(inst.n_v):
            for m in range(inst.n_m):
                self.y[(k, m)] = n
                n += 1
        for m in range(inst.n_m):
            self.z[m] = n
            n += 1
        for m in range(inst.n_m):
            self.q[m] = n
            n += 1
        for k in range(inst.n_v):
            self.q[inst.terminal_node(k)] = n
            n += 1
        self._first_req_var = n
        for m, task in enumerate(inst.tasks):
            flat = _flatten(task.requirement)
            leaves = list(_walk_atoms(flat))
            for ordinal, atom in enumerate(leaves):
                self.w[(m, ordinal)] = n
                key = (m, atom.capability)
                if key not in self.w_by_cap:
                    self.w_by_cap[key] = n
                n += 1
            for ordinal in range(_count_aux(flat)):
                self.aux[(m, ordinal)] = n
                n += 1
        if with_recourse:
            for k in range(inst.n_v):
                self.theta[k] = n
                n += 1
        # connectivity-flow auxiliaries (continuous), one per start/task edge
        self.flow: dict[tuple[int, int, int], int] = {}
        for k in range(inst.n_v):
            s = inst.start_node(k)
            for m in range(inst.n_m):
                self.flow[(k, s, m)] = n
                n += 1
            for i in range(inst.n_m):
                for j in range(inst.n_m):
                    if i != j:
                        self.flow[(k, i, j)] = n
                        n += 1
        self.num_vars = n

    def binaries(self) -> list[int]:
        ids = list(self.x.values()) + list(self.y.values()) + list(self.z.values())
        ids += list(self.w.values()) + list(self.aux.values())
        return ids

    def selected_edges(self, values: np.ndarray, k: int) -> list[tuple[int, int]]:
        return [(i, j) for (i, j) in self.inst.routing_edges(k) if values[self.x[(k, i, j)]] > 0.5]


def _count_aux(node) -> int:
    """Auxiliary binaries = AND nodes appearing under an OR (after flattening)."""
    if isinstance(node, Atom):
        return 0
    count = 0
    if isinstance(node, AnyOf):
        for c in node.children:
            if isinstance(c, AllOf):
                count += 1 + _count_aux(c)
            # atoms contribute nothing; AnyOf impossible after flattening
    else:
        for c in node.children:
            count += _count_aux(c)
    return count


# ---------------------------------------------------------------------------
# requirement linearization
# ---------------------------------------------------------------------------

def linearize_requirement(
    requirement,
    z_var: int,
    alpha: dict[int, dict[int, float]],
    w_vars: list[int],
    aux_vars: list[int],
    c_large: float,
) -> list[LinearRow]:
    """Emit the linear rows tying z_var to the requirement over team sums.

    `alpha[capability]` maps y-variable index -> capability coefficient (the
    team-sum expression). `w_vars` supplies one binary per atom (in leaf
    order of the flattened tree), `aux_vars` one binary per AND-under-OR
    node. Rows returned:
      * per '>=' atom:  gamma*w - alpha <= 0   and   alpha - C*w <= gamma-1
      * per '<=' atom:  alpha + C*w <= gamma + C   and   alpha + C*w >= gamma+1
      * per OR level:   target <= sum of child indicators
      * per AND child:  target <= child indicator
    With integral capability data, w equals the atom's truth value exactly.
    """
    flat = _flatten(requirement)
    rows: list[LinearRow] = []
    leaf_iter = iter(w_vars)
    aux_iter = iter(aux_vars)

    def atom_rows(atom: Atom) -> int:
        w = next(leaf_iter)
        expr = alpha[atom.capability]
        if not atom.at_most:
            gamma = atom.threshold
            coeffs = {w: gamma}
            for yv, c in expr.items():
                coeffs[yv] = coeffs.get(yv, 0.0) - c
            rows.append(LinearRow(coeffs, Relation.LE, 0.0))
            coeffs2 = dict(expr)
            coeffs2[w] = coeffs2.get(w, 0.0) - c_large
            rows.append(LinearRow(coeffs2, Relation.LE, gamma - 1.0))
        else:
            gamma = atom.threshold
            if gamma == 0:
                raise ValidationError(["'<=' atom with zero threshold is not linearizable"])
            coeffs = dict(expr)
            coeffs[w] = coeffs.get(w, 0.0) + c_large
            rows.append(LinearRow(coeffs, Relation.LE, gamma + c_large))
            coeffs2 = dict(expr)
            coeffs2[w] = coeffs2.get(w, 0.0) + c_large
            rows.append(LinearRow(coeffs2, Relation.GE, gamma + 1.0))
        return w

    def indicator(node) -> int:
        """Variable upper-bounding the truth of `node` (atom w or aux v)."""
        if isinstance(node, Atom):
            return atom_rows(node)
        v = next(aux_iter)
        emit(v, node)
        return v

    def emit(target: int, node) -> None:
        if isinstance(node, Atom):
            w = atom_rows(node)
            rows.append(LinearRow({target: 1.0, w: -1.0}, Relation.LE, 0.0))
        elif isinstance(node, AllOf):
            for child in node.children:
                if isinstance(child, Atom):
                    w = atom_rows(child)
                    rows.append(LinearRow({target: 1.0, w: -1.0}, Relation.LE, 0.0))
                else:  # AnyOf: inline one OR row against this target
                    coeffs = {target: 1.0}
                    for g in child.children:
                        coeffs[indicator(g)] = -1.0
                    rows.append(LinearRow(coeffs, Relation.LE, 0.0))
        else:  # AnyOf root
            coeffs = {target: 1.0}
            for child in node.children:
                coeffs[indicator(child)] = -1.0
            rows.append(LinearRow(coeffs, Relation.LE, 0.0))

    emit(z_var, flat)
    return rows


# ---------------------------------------------------------------------------
# MILP construction
# ---------------------------------------------------------------------------

STRENGTHEN_TRIPLE_CAP = 14


def build_milp(
    inst: ProblemInstance,
    *,
    energy_rows: bool = True,
    recourse_vars: bool = False,
    symmetry_rows: bool = True,
    strengthen: bool = True,
    time_limit: float | None = 500.0,
) -> tuple[MipProblem, VariableIndex]:
    """Assemble the routing/teaming MILP.

    energy_rows: include the per-vehicle expected-energy capacity rows.
    recourse_vars: add one nonnegative theta per vehicle with objective
        coefficient 1 (the recourse lower-bound surrogate).
    symmetry_rows: add ordering rows within groups of exactly identical
        vehicles (valid for the optimal value; prunes permuted duplicates).
    strengthen: add subtour-elimination rows in y-form over task pairs
        (and triples up to STRENGTHEN_TRIPLE_CAP tasks). The schedule rows
        already forbid integral subtours, but their big-M leaves fractional
        two/three-cycles that make the relaxation far too weak to search.
    """
    validate_instance(inst)
    index = VariableIndex(inst, with_recourse=recourse_vars)
    n = index.num_vars
    obj = np.zeros(n)
    lower = np.zeros(n)
    upper = np.full(n, np.inf)
    for b in index.binaries():
        upper[b] = 1.0
    for col in index.flow.values():
        upper[col] = float(inst.n_m)
    for (k, i, j), col in index.x.items():
        obj[col] = inst.mean(k, i, j)
    for node, col in index.q.items():
        if not inst.is_task_node(node):
            obj[col] = inst.c_q
    for k, col in index.theta.items():
        obj[col] = 1.0

    rows: list[LinearRow] = []
    # per-row tight big-M: large enough to free the row when the edge is
    # unused (minimal-schedule q values never exceed the horizon estimate),
    # small enough that near-integral fractional cycles cannot hide in the
    # slack; a uniform c_large_time override is honored when configured
    horizon = inst.horizon_estimate()
    uniform_m = inst.c_large_time

    for k in range(inst.n_v):
        s, u = inst.start_node(k), inst.terminal_node(k)
        # flow conservation at every task node
        for m in range(inst.n_m):
            coeffs: dict[int, float] = {}
            for i in [s] + [i for i in range(inst.n_m) if i != m]:
                coeffs[index.x[(k, i, m)]] = 1.0
            for j in [u] + [j for j in range(inst.n_m) if j != m]:
                coeffs[index.x[(k, m, j)]] = coeffs.get(index.x[(k, m, j)], 0.0) - 1.0
            rows.append(LinearRow(coeffs, Relation.EQ, 0.0))
        # at most one departure from the start
        rows.append(LinearRow({index.x[(k, s, m)]: 1.0 for m in range(inst.n_m)}, Relation.LE, 1.0))
        # a vehicle can visit tasks only if it departed
        for j in range(inst.n_m):
            coeffs = {index.x[(k, s, m)]: -1.0 for m in range(inst.n_m)}
            coeffs[index.y[(k, j)]] = 1.0
            rows.append(LinearRow(coeffs, Relation.LE, 0.0))
        # y equals the selected in-degree
        for j in range(inst.n_m):
            coeffs = {index.y[(k, j)]: 1.0, index.x[(k, s, j)]: -1.0}
            for i in range(inst.n_m):
                if i != j:
                    coeffs[index.x[(k, i, j)]] = -1.0
            rows.append(LinearRow(coeffs, Relation.EQ, 0.0))
        if energy_rows:
            coeffs = {index.x[(k, i, j)]: inst.mean(k, i, j) for (i, j) in inst.routing_edges(k)}
            rows.append(LinearRow(coeffs, Relation.LE, inst.vehicles[k].energy_capacity))
        # schedule rows: q_j >= q_i + service_i + travel when edge selected
        for (i, j) in inst.routing_edges(k):
            t_edge = inst.travel_times[(k, i, j)]
            t_serv = inst.service_time(k, i)
            big_m = uniform_m if uniform_m is not None else horizon + t_edge + t_serv
            coeffs = {index.x[(k, i, j)]: big_m}
            if inst.is_task_node(i):
                coeffs[index.q[i]] = coeffs.get(index.q[i], 0.0) + 1.0
            coeffs[index.q[j]] = coeffs.get(index.q[j], 0.0) - 1.0
            rows.append(LinearRow(coeffs, Relation.LE, big_m - t_edge - t_serv))

    big_m_req = inst.requirement_big_m()
    for m, task in enumerate(inst.tasks):
        rows.append(LinearRow({index.z[m]: 1.0}, Relation.EQ, 1.0))
        alpha = {
            a: {index.y[(k, m)]: inst.vehicles[k].capabilities[a]
                for k in range(inst.n_v) if inst.vehicles[k].capabilities[a] != 0.0}
            for a in range(len(inst.capabilities))
        }
        w_vars = [index.w[(m, o)] for o in range(_leaf_count(task.requirement))]
        aux_vars = [index.aux[(m, o)] for o in range(_count_aux(_flatten(task.requirement)))]
        rows.extend(linearize_requirement(task.requirement, index.z[m], alpha, w_vars, aux_vars, big_m_req))

    if strengthen:
        for k in range(inst.n_v):
            for i in range(inst.n_m):
                for j in range(i + 1, inst.n_m):
                    for anchor in (i, j):
                        rows.append(LinearRow(
                            {index.x[(k, i, j)]: 1.0, index.x[(k, j, i)]: 1.0,
                             index.y[(k, anchor)]: -1.0}, Relation.LE, 0.0))
        if inst.n_m <= STRENGTHEN_TRIPLE_CAP:
            for k in range(inst.n_v):
                for triple in itertools.combinations(range(inst.n_m), 3):
                    edges = [(i, j) for i in triple for j in triple if i != j]
                    for t in triple:
                        coeffs = {index.x[(k, i, j)]: 1.0 for (i, j) in edges}
                        for i in triple:
                            if i != t:
                                coeffs[index.y[(k, i)]] = -1.0
                        rows.append(LinearRow(coeffs, Relation.LE, 0.0))
        # connectivity flow: the start ships one unit per visited task along
        # selected edges, so no structure detached from the start can carry y
        for k in range(inst.n_v):
            s = inst.start_node(k)
            for (kk, i, j), col in index.flow.items():
                if kk == k:
                    rows.append(LinearRow({col: 1.0, index.x[(k, i, j)]: -float(inst.n_m)},
                                          Relation.LE, 0.0))
            source = {index.flow[(k, s, m)]: 1.0 for m in range(inst.n_m)}
            for m in range(inst.n_m):
                source[index.y[(k, m)]] = -1.0
            rows.append(LinearRow(source, Relation.EQ, 0.0))
            for m in range(inst.n_m):
                coeffs = {index.flow[(k, s, m)]: 1.0}
                for i in range(inst.n_m):
                    if i != m:
                        coeffs[index.flow[(k, i, m)]] = 1.0
                        coeffs[index.flow[(k, m, i)]] = -1.0
                coeffs[index.y[(k, m)]] = -1.0
                rows.append(LinearRow(coeffs, Relation.EQ, 0.0))

    if symmetry_rows:
        for group in identical_vehicle_groups(inst):
            for a, b in zip(group, group[1:]):
                sa, sb = inst.start_node(a), inst.start_node(b)
                coeffs = {index.x[(a, sa, m)]: 1.0 for m in range(inst.n_m)}
                for m in range(inst.n_m):
                    coeffs[index.x[(b, sb, m)]] = -1.0
                rows.append(LinearRow(coeffs, Relation.GE, 0.0))
                for i in range(inst.n_m):
                    coeffs = {index.y[(a, j)]: -1.0 for j in range(i + 1)}
                    coeffs[index.y[(b, i)]] = 1.0
                    rows.append(LinearRow(coeffs, Relation.LE, 0.0))

    lp = LinearProgram(objective=obj, rows=rows, lower=lower, upper=upper)
    problem = MipProblem(lp=lp, integer_vars=index.binaries(), c_large=inst.time_big_m(),
                         time_limit=time_limit)
    return problem, index


def build_deterministic(inst: ProblemInstance, time_limit: float | None = 500.0):
    """The baseline model: expected-energy objective, capacity by means."""
    return build_milp(inst, energy_rows=True, recourse_vars=False, time_limit=time_limit)


def _leaf_count(req) -> int:
    return sum(1 for _ in _walk_atoms(_flatten(req)))


def identical_vehicle_groups(inst: ProblemInstance) -> list[list[int]]:
    """Groups of vehicles that are exactly interchangeable (>= 2 members)."""
    def key(k: int):
        v = inst.vehicles[k]
        costs = []
        for (i, j) in inst.routing_edges(k):
            g = inst.edge_costs[(k, i, j)]
            costs.append((_relabel(inst, k, i), _relabel(inst, k, j), g.mean, g.variance,
                          inst.travel_times[(k, i, j)]))
        services = tuple(t.service_times.get(k, 0.0) for t in inst.tasks)
        return (v.type_label, v.capabilities, v.energy_capacity, v.beta,
                tuple(costs), services)

    buckets: dict = {}
    for k in range(inst.n_v):
        buckets.setdefault(key(k), []).append(k)
    return [sorted(g) for g in buckets.values() if len(g) > 1]


def _relabel(inst: ProblemInstance, k: int, node: int) -> object:
    """Vehicle-relative node label so cost tables compare across vehicles."""
    if inst.is_task_node(node):
        return node
    return "s" if node == inst.start_node(k) else "u"


# ---------------------------------------------------------------------------
# plan decoding and replay
# ---------------------------------------------------------------------------

@dataclass
class Plan:
    routes: dict[int, list[int]]
    task_teams: dict[int, list[int]]
    start_times: dict[int, float]
    energy_cost: float
    time_penalty: float
    recourse_cost: float = 0.0

    @property
    def linear_objective(self) -> float:
        """Energy plus time penalty (the objective's linear part)."""
        return self.energy_cost + self.time_penalty

    @property
    def total_objective(self) -> float:
        return self.linear_objective + self.recourse_cost

    def route_edges(self, k: int) -> list[tuple[int, int]]:
        r = self.routes.get(k, [])
        return list(zip(r, r[1:]))


def route_from_edges(inst: ProblemInstance, k: int, selected: list[tuple[int, int]]) -> list[int]:
    """Order a vehicle's selected edges into [start, tasks..., terminal].

    Raises PlanDecodeError on branching/disconnected structure; returns []
    for an empty selection.
    """
    if not selected:
        return []
    s, u = inst.start_node(k), inst.terminal_node(k)
    succ: dict[int, int] = {}
    for (i, j) in selected:
        if i in succ:
            raise PlanDecodeError(f"vehicle {k}: node {inst.node_name(i)} has two outgoing edges")
        succ[i] = j
    if s not in succ:
        raise PlanDecodeError(f"vehicle {k}: selected edges do not leave the start")
    route = [s]
    seen = {s}
    while route[-1] != u:
        nxt = succ.get(route[-1])
        if nxt is None:
            raise PlanDecodeError(f"vehicle {k}: route dead-ends at {inst.node_name(route[-1])}")
        if nxt in seen:
            raise PlanDecodeError(f"vehicle {k}: route revisits {inst.node_name(nxt)}")
        route.append(nxt)
        seen.add(nxt)
    if len(route) - 1 != len(selected):
        raise PlanDecodeError(f"vehicle {k}: disconnected edges beyond the start-terminal path")
    return route


def extract_plan(inst: ProblemInstance, index: VariableIndex, values: np.ndarray) -> Plan:
    """Decode an integral solution into routes, teams, and start times.

    Raises PlanDecodeError if x encodes branching or disconnected structure,
    and replays the schedule rows independently of the LP.
    """
    routes: dict[int, list[int]] = {}
    teams: dict[int, list[int]] = {m: [] for m in range(inst.n_m)}
    energy = 0.0
    for k in range(inst.n_v):
        route = route_from_edges(inst, k, index.selected_edges(values, k))
        routes[k] = route
        for m in route[1:-1]:
            teams[m].append(k)
        energy += sum(inst.mean(k, i, j) for (i, j) in zip(route, route[1:]))

    q = {m: float(values[index.q[m]]) for m in range(inst.n_m)}
    for k in range(inst.n_v):
        q[inst.terminal_node(k)] = float(values[index.q[inst.terminal_node(k)]])
    time_penalty = inst.c_q * sum(q[inst.terminal_node(k)] for k in range(inst.n_v))
    plan = Plan(routes=routes, task_teams={m: sorted(v) for m, v in teams.items()},
                start_times=q, energy_cost=energy, time_penalty=time_penalty)

    problems = check_plan(inst, plan, check_requirements=False, check_energy=False)
    if problems:
        raise PlanDecodeError("; ".join(problems))
    return plan


def check_plan(
    inst: ProblemInstance,
    plan: Plan,
    *,
    check_requirements: bool = True,
    check_energy: bool = True,
    tol: float = PLAN_TOL,
) -> list[str]:
    """Independent replay of flow/schedule/requirement/energy feasibility."""
    problems: list[str] = []
    visitors: dict[int, list[int]] = {m: [] for m in range(inst.n_m)}
    for k in range(inst.n_v):
        route = plan.routes.get(k, [])
        if not route:
            continue
        if route[0] != inst.start_node(k) or route[-1] != inst.terminal_node(k):
            problems.append(f"vehicle {k}: route endpoints are not its start/terminal")
            continue
        interior = route[1:-1]
        if any(not inst.is_task_node(m) for m in interior):
            problems.append(f"vehicle {k}: interior nodes must be tasks")
            continue
        if len(set(interior)) != len(interior):
            problems.append(f"vehicle {k}: route is not simple")
        for m in interior:
            visitors[m].append(k)
        q_prev = 0.0
        prev = route[0]
        for node in route[1:]:
            lb = q_prev + inst.service_time(k, prev) + inst.travel_times[(k, prev, node)]
            q_node = plan.start_times.get(node)
            if q_node is None:
                problems.append(f"vehicle {k}: missing start time for {inst.node_name(node)}")
                break
            if q_node < lb - tol:
                problems.append(
                    f"vehicle {k}: {inst.node_name(node)} starts at {q_node:.6f} before bound {lb:.6f}")
            q_prev, prev = q_node, node
        if check_energy:
            total = sum(inst.mean(k, i, j) for (i, j) in zip(route, route[1:]))
            if total > inst.vehicles[k].energy_capacity + tol:
                problems.append(f"vehicle {k}: expected energy {total:.3f} exceeds capacity")
    for m in range(inst.n_m):
        team = sorted(visitors[m])
        if team != plan.task_teams.get(m, []):
            problems.append(f"task {m}: recorded team {plan.task_teams.get(m)} != route visitors {team}")
        if not team:
            problems.append(f"task {m}: no vehicle visits it")
        elif check_requirements:
            alpha = [sum(inst.vehicles[k].capabilities[a] for k in team)
                     for a in range(len(inst.capabilities))]
            if not inst.tasks[m].requirement.evaluate(alpha):
                problems.append(f"task {m}: team {team} does not satisfy the requirement")
    return problems


def canonical_relabel(inst: ProblemInstance, plan: Plan) -> Plan:
    """Relabel routes within identical-vehicle groups into the canonical order.

    The order (used vehicles first, ascending first-task id) is the one the
    symmetry rows of build_milp admit, so a relabeled plan can seed a warm
    start. The objective is unchanged because group members are identical.
    """
    routes = dict(plan.routes)
    times = dict(plan.start_times)
    for group in identical_vehicle_groups(inst):
        entries = []
        for k in group:
            r = plan.routes.get(k, [])
            interior = tuple(r[1:-1])
            key = (0, min(interior), interior) if interior else (1, 0, ())
            entries.append((key, interior, plan.start_times.get(inst.terminal_node(k), 0.0)))
        entries.sort(key=lambda e: e[0])
        for k, (_, interior, q_u) in zip(group, entries):
            routes[k] = ([inst.start_node(k)] + list(interior) + [inst.terminal_node(k)]
                         if interior else [])
            times[inst.terminal_node(k)] = q_u if interior else 0.0
    teams: dict[int, list[int]] = {m: [] for m in range(inst.n_m)}
    for k, r in routes.items():
        for m in r[1:-1]:
            teams[m].append(k)
    return Plan(routes=routes, task_teams={m: sorted(v) for m, v in teams.items()},
                start_times=times, energy_cost=plan.energy_cost,
                time_penalty=plan.time_penalty, recourse_cost=plan.recourse_cost)


def encode_plan(
    inst: ProblemInstance,
    index: VariableIndex,
    plan: Plan,
    theta: dict[int, float] | None = None,
) -> np.ndarray:
    """Assemble a full feasible assignment vector from a plan (warm starts).

    The plan is canonically relabeled first so symmetry rows hold. Requires
    integral capability data (w indicators are set to atom truth values).
    """
    plan = canonical_relabel(inst, plan)
    values = np.zeros(index.num_vars)
    for k in range(inst.n_v):
        for (i, j) in plan.route_edges(k):
            values[index.x[(k, i, j)]] = 1.0
        interior = plan.routes.get(k, [])[1:-1]
        for m in interior:
            values[index.y[(k, m)]] = 1.0
        # connectivity flow: ship one unit per remaining task along the route
        remaining = len(interior)
        for (i, j) in plan.route_edges(k):
            if (k, i, j) in index.flow:
                values[index.flow[(k, i, j)]] = float(remaining)
                remaining -= 1
    for m in range(inst.n_m):
        values[index.z[m]] = 1.0
        values[index.q[m]] = plan.start_times.get(m, 0.0)
    for k in range(inst.n_v):
        u = inst.terminal_node(k)
        values[index.q[u]] = plan.start_times.get(u, 0.0)
    for m, task in enumerate(inst.tasks):
        team = plan.task_teams.get(m, [])
        alpha = [sum(inst.vehicles[k].capabilities[a] for k in team)
                 for a in range(len(inst.capabilities))]
        flat = _flatten(task.requirement)
        for ordinal, atom in enumerate(_walk_atoms(flat)):
            values[index.w[(m, ordinal)]] = 1.0 if atom.evaluate(alpha) else 0.0
        for ordinal, node in enumerate(_walk_aux_nodes(flat)):
            values[index.aux[(m, ordinal)]] = 1.0 if node.evaluate(alpha) else 0.0
    if theta:
        for k, v in theta.items():
            values[index.theta[k]] = v
    return values


def _walk_aux_nodes(node):
    """AND-under-OR nodes in the same order the linearizer allocates them."""
    if isinstance(node, Atom):
        return
    if isinstance(node, AnyOf):
        for c in node.children:
            if isinstance(c, AllOf):
                yield c
                yield from _walk_aux_nodes(c)
    else:
        for c in node.children:
            yield from _walk_aux_nodes(c)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

FORMAT_NAME = "team-routing-instance"
FORMAT_VERSION = 1


def _req_to_obj(req) -> dict:
    if isinstance(req, Atom):
        return {"atom": {"capability": req.capability, "threshold": req.threshold,
                         "direction": "<=" if req.at_most else ">="}}
    kind = "all_of" if isinstance(req, AllOf) else "any_of"
    return {kind: [_req_to_obj(c) for c in req.children]}


def _req_from_obj(obj: dict):
    if "atom" in obj:
        a = obj["atom"]
        return Atom(a["capability"], a["threshold"], a["direction"] == "<=")
    if "all_of" in obj:
        return AllOf(tuple(_req_from_obj(c) for c in obj["all_of"]))
    if "any_of" in obj:
        return AnyOf(tuple(_req_from_obj(c) for c in obj["any_of"]))
    raise ValueError(f"bad requirement object {obj!r}")


def instance_to_json(inst: ProblemInstance) -> str:
    """Canonical text form; 'second_moment' documents the variance convention."""
    edges = []
    for (k, i, j) in sorted(inst.edge_costs):
        g = inst.edge_costs[(k, i, j)]
        rec = {"vehicle": k, "from": inst.node_name(i), "to": inst.node_name(j),
               "mean": g.mean, "variance": g.variance}
        t = inst.travel_times.get((k, i, j))
        if t is not None:
            rec["time"] = t
        edges.append(rec)
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "second_moment": "variance",
        "capabilities": [{"id": c.id, "name": c.name} for c in inst.capabilities],
        "vehicles": [
            {"id": v.id, "type": v.type_label, "capabilities": list(v.capabilities),
             "energy_capacity": v.energy_capacity, "beta": v.beta,
             "start_location": v.start_location, "terminal_location": v.terminal_location}
            for v in inst.vehicles
        ],
        "tasks": [
            {"id": t.id, "location": t.location, "requirement": _req_to_obj(t.requirement),
             "service_times": {str(k): st for k, st in sorted(t.service_times.items())}}
            for t in inst.tasks
        ],
        "edges": edges,
        "rescue": None if inst.rescue is None else {
            "location": inst.rescue.location,
            "to_node": {inst.node_name(n): m for n, m in sorted(inst.rescue.to_node.items())},
            "back_node": {inst.node_name(n): m for n, m in sorted(inst.rescue.back_node.items())},
        },
        "params": {"C_q": inst.c_q, "C_g": inst.c_g, "C_large_time": inst.c_large_time},
        "meta": inst.meta,
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def instance_from_json(text: str) -> ProblemInstance:
    doc = json.loads(text)
    if doc.get("format") != FORMAT_NAME:
        raise ValidationError([f"unknown format {doc.get('format')!r}"])
    if doc.get("version") != FORMAT_VERSION:
        raise ValidationError([f"unsupported version {doc.get('version')!r}"])
    caps = [Capability(c["id"], c["name"]) for c in doc["capabilities"]]
    vehicles = [
        Vehicle(v["id"], v["type"], tuple(v["capabilities"]), v["energy_capacity"], v["beta"],
                tuple(v["start_location"]) if v.get("start_location") else None,
                tuple(v["terminal_location"]) if v.get("terminal_location") else None)
        for v in doc["vehicles"]
    ]
    tasks = [
        Task(t["id"], tuple(t["location"]) if t.get("location") else None,
             _req_from_obj(t["requirement"]),
             {int(k): st for k, st in t["service_times"].items()})
        for t in doc["tasks"]
    ]
    inst = ProblemInstance(capabilities=caps, vehicles=vehicles, tasks=tasks,
                           edge_costs={}, travel_times={},
                           c_q=doc["params"]["C_q"], c_g=doc["params"]["C_g"],
                           c_large_time=doc["params"].get("C_large_time"),
                           meta=doc.get("meta", {}))
    for rec in doc["edges"]:
        k = rec["vehicle"]
        i, j = inst.node_from_name(rec["from"]), inst.node_from_name(rec["to"])
        inst.edge_costs[(k, i, j)] = GaussianScalar(rec["mean"], rec["variance"])
        if "time" in rec:
            inst.travel_times[(k, i, j)] = rec["time"]
    if doc.get("rescue"):
        r = doc["rescue"]
        inst.rescue = RescueVehicle(
            tuple(r["location"]) if r.get("location") else None,
            {inst.node_from_name(nm): m for nm, m in r["to_node"].items()},
            {inst.node_from_name(nm): m for nm, m in r["back_node"].items()},
        )
    validate_instance(inst)
    return inst


def plan_to_dict(inst: ProblemInstance, plan: Plan) -> dict:
    return {
        "routes": {str(k): [inst.node_name(n) for n in route]
                   for k, route in sorted(plan.routes.items())},
        "task_teams": {str(m): team for m, team in sorted(plan.task_teams.items())},
        "start_times": {inst.node_name(n): t for n, t in sorted(plan.start_times.items())},
        "objective": {
            "energy": plan.energy_cost,
            "time_penalty": plan.time_penalty,
            "recourse": plan.recourse_cost,
            "linear": plan.linear_objective,
            "total": plan.total_objective,
        },
    }


def plan_from_dict(inst: ProblemInstance, doc: dict) -> Plan:
    routes = {int(k): [inst.node_from_name(nm) for nm in route]
              for k, route in doc["routes"].items()}
    teams = {int(m): list(team) for m, team in doc["task_teams"].items()}
    times = {inst.node_from_name(nm): t for nm, t in doc["start_times"].items()}
    obj = doc["objective"]
    return Plan(routes=routes, task_teams=teams, start_times=times,
                energy_cost=obj["energy"], time_penalty=obj["time_penalty"],
                recourse_cost=obj.get("recourse", 0.0))
