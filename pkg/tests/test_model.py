import itertools

import numpy as np
import pytest

from teamroute.cli import ScenarioConfig, generate_scenario
from teamroute.lp import Relation
from teamroute.mip import solve_mip
from teamroute.model import (
    AllOf,
    AnyOf,
    Atom,
    Plan,
    PlanDecodeError,
    ValidationError,
    VariableIndex,
    build_deterministic,
    build_milp,
    canonical_relabel,
    check_plan,
    encode_plan,
    extract_plan,
    instance_from_json,
    instance_to_json,
    linearize_requirement,
    plan_from_dict,
    plan_to_dict,
    validate_instance,
)


# ---------------------------------------------------------------------------
# requirement linearization
# ---------------------------------------------------------------------------

def rows_feasible_for_alpha(requirement, alpha_values, c_large=100.0, force_z=True):
    """Decide feasibility of the emitted rows by enumerating the binaries.

    alpha is substituted as constants (one pseudo y-variable per capability
    with coefficient alpha), mirroring a fixed team.
    """
    n_a = len(alpha_values)
    # vars: 0..n_a-1 pseudo-y (fixed 1), then z, then w/aux appended
    z = n_a
    counter = [n_a + 1]

    def alloc():
        counter[0] += 1
        return counter[0] - 1

    from teamroute.model import _count_aux, _flatten, _walk_atoms

    flat = _flatten(requirement)
    n_w = sum(1 for _ in _walk_atoms(flat))
    n_aux = _count_aux(flat)
    w_vars = [alloc() for _ in range(n_w)]
    aux_vars = [alloc() for _ in range(n_aux)]
    alpha = {a: {a: float(alpha_values[a])} for a in range(n_a)}
    rows = linearize_requirement(requirement, z, alpha, w_vars, aux_vars, c_large)
    n_total = counter[0]
    for bits in itertools.product((0.0, 1.0), repeat=n_w + n_aux):
        x = np.zeros(n_total)
        x[:n_a] = 1.0  # pseudo-y fixed: alpha coefficients count fully
        x[z] = 1.0 if force_z else 0.0
        for var, val in zip(w_vars + aux_vars, bits):
            x[var] = val
        if all(r.satisfied(x, tol=1e-9) for r in rows):
            return True
    return False


def eval_requirement(requirement, alpha_values):
    return requirement.evaluate(list(alpha_values))


def test_single_unit_atom_tracks_indicator():
    req = Atom(0, 1.0)
    for alpha in (0, 1, 2, 3):
        assert rows_feasible_for_alpha(req, [alpha]) == (alpha >= 1)


def test_two_level_requirement_row_set_matches_reference_shape():
    # [(a2>=g) or (a3>=g)] and [a4>=g] and [(a5>=g) or (a6>=g)] over 6 caps
    req = AllOf((AnyOf((Atom(1, 2.0), Atom(2, 3.0))), Atom(3, 1.0),
                 AnyOf((Atom(4, 1.0), Atom(5, 2.0)))))
    z = 6
    counter = [7]

    def alloc():
        counter[0] += 1
        return counter[0] - 1

    w_vars = [alloc() for _ in range(5)]
    alpha = {a: {a: 1.0} for a in range(6)}
    rows = linearize_requirement(req, z, alpha, w_vars, [], 50.0)
    # five atoms -> five bound pairs, plus one z-row per top-level clause
    z_rows = [r for r in rows if z in r.coeffs]
    w_rows = [r for r in rows if z not in r.coeffs]
    assert len(z_rows) == 3
    assert len(w_rows) == 10
    # no auxiliaries were needed for the two-level shape
    assert counter[0] == 7 + 5


def test_truth_table_and_or_combinations():
    reqs = [
        Atom(0, 2.0),
        AllOf((Atom(0, 1.0), Atom(1, 2.0))),
        AnyOf((Atom(0, 2.0), Atom(1, 1.0))),
        AllOf((AnyOf((Atom(0, 1.0), Atom(1, 1.0))), Atom(2, 2.0))),
        AnyOf((AllOf((Atom(0, 1.0), Atom(1, 1.0))), Atom(2, 3.0))),  # aux binary needed
    ]
    for req in reqs:
        for alpha in itertools.product(range(4), repeat=3):
            expected = eval_requirement(req, alpha)
            assert rows_feasible_for_alpha(req, list(alpha)) == expected, (req, alpha)


def test_at_most_atom_truth_table():
    req = Atom(0, 2.0, at_most=True)
    for alpha in range(0, 5):
        assert rows_feasible_for_alpha(req, [alpha]) == (alpha <= 2)
    nested = AllOf((Atom(0, 2.0, at_most=True), Atom(1, 1.0)))
    for a0 in range(0, 5):
        for a1 in range(0, 3):
            assert rows_feasible_for_alpha(nested, [a0, a1]) == ((a0 <= 2) and a1 >= 1)


def test_at_most_zero_threshold_rejected():
    with pytest.raises(ValidationError):
        rows_feasible_for_alpha(Atom(0, 0.0, at_most=True), [0])


def test_nested_nesting_flattens():
    req = AnyOf((AnyOf((Atom(0, 1.0), Atom(1, 1.0))), Atom(2, 1.0)))
    for alpha in itertools.product((0, 1), repeat=3):
        assert rows_feasible_for_alpha(req, list(alpha)) == any(alpha)


def test_z_zero_always_feasible():
    # rows only upper-bound z; with z=0 any team is fine
    req = AllOf((Atom(0, 1.0), Atom(1, 1.0)))
    assert rows_feasible_for_alpha(req, [0, 0], force_z=False)


# ---------------------------------------------------------------------------
# instance construction and solving
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_instance():
    return generate_scenario(ScenarioConfig(seed=4, n_v=2, n_m=2))


def test_validate_instance_reports_all_problems(small_instance):
    import copy

    inst = copy.deepcopy(small_instance)
    key = next(iter(inst.edge_costs))
    del inst.edge_costs[key]
    inst.vehicles[0].energy_capacity = -1.0
    with pytest.raises(ValidationError) as err:
        validate_instance(inst)
    text = str(err.value)
    assert "missing edge cost" in text
    assert "energy capacity" in text


def test_variable_index_bijectivity(small_instance):
    index = VariableIndex(small_instance, with_recourse=True)
    cols = (list(index.x.values()) + list(index.y.values()) + list(index.z.values())
            + list(index.q.values()) + list(index.w.values()) + list(index.aux.values())
            + list(index.theta.values()))
    assert sorted(cols) == list(range(index.num_vars))


def test_solution_decodes_to_consistent_plan(small_instance):
    problem, index = build_deterministic(small_instance, time_limit=30)
    sol = solve_mip(problem)
    plan = extract_plan(small_instance, index, sol.values)
    assert not check_plan(small_instance, plan)
    # degree consistency and y-x linkage on the decoded plan
    for k in range(small_instance.n_v):
        route = plan.routes[k]
        for m in route[1:-1]:
            ins = sum(1 for (i, j) in plan.route_edges(k) if j == m)
            outs = sum(1 for (i, j) in plan.route_edges(k) if i == m)
            assert ins == outs == 1
            assert sol.values[index.y[(k, m)]] == pytest.approx(1.0, abs=1e-6)


def test_single_vehicle_single_task_route():
    inst = generate_scenario(ScenarioConfig(seed=9, n_v=1, n_m=1, n_av=1, n_am=1))
    problem, index = build_deterministic(inst, time_limit=30)
    sol = solve_mip(problem)
    plan = extract_plan(inst, index, sol.values)
    assert plan.routes[0] == [inst.start_node(0), 0, inst.terminal_node(0)]
    expected = inst.mean(0, inst.start_node(0), 0) + inst.mean(0, 0, inst.terminal_node(0))
    assert plan.energy_cost == pytest.approx(expected, abs=1e-6)


def test_threshold_two_forces_a_pair():
    inst = generate_scenario(ScenarioConfig(seed=2, n_v=2, n_m=1, n_a=1, n_av=1, n_am=1))
    inst.tasks[0].requirement = Atom(0, 2.0)
    problem, index = build_deterministic(inst, time_limit=30)
    sol = solve_mip(problem)
    plan = extract_plan(inst, index, sol.values)
    assert plan.task_teams[0] == [0, 1]


def test_schedule_replay_on_chain():
    inst = generate_scenario(ScenarioConfig(seed=13, n_v=1, n_m=2, n_av=1, n_am=1))
    problem, index = build_deterministic(inst, time_limit=30)
    sol = solve_mip(problem)
    plan = extract_plan(inst, index, sol.values)
    route = plan.routes[0]
    assert len(route) == 4  # s, two tasks, u
    q_prev, prev = 0.0, route[0]
    for node in route[1:]:
        lb = q_prev + inst.service_time(0, prev) + inst.travel_times[(0, prev, node)]
        assert plan.start_times[node] >= lb - 1e-6
        q_prev, prev = plan.start_times[node], node


def test_unused_vehicle_has_empty_route():
    inst = generate_scenario(ScenarioConfig(seed=21, n_v=3, n_m=1, n_a=1, n_av=1, n_am=1))
    problem, index = build_deterministic(inst, time_limit=30)
    sol = solve_mip(problem)
    plan = extract_plan(inst, index, sol.values)
    used = [k for k, r in plan.routes.items() if r]
    assert len(used) == 1
    for k in range(3):
        if k not in used:
            assert plan.routes[k] == []


def test_extract_plan_rejects_branching_structure(small_instance):
    index = VariableIndex(small_instance)
    values = np.zeros(index.num_vars)
    s = small_instance.start_node(0)
    values[index.x[(0, s, 0)]] = 1.0
    values[index.x[(0, s, 1)]] = 1.0  # two departures: malformed
    with pytest.raises(PlanDecodeError):
        extract_plan(small_instance, index, values)


def test_extract_plan_rejects_disconnected_cycle(small_instance):
    index = VariableIndex(small_instance)
    values = np.zeros(index.num_vars)
    values[index.x[(0, 0, 1)]] = 1.0
    values[index.x[(0, 1, 0)]] = 1.0  # task cycle not attached to the start
    with pytest.raises(PlanDecodeError):
        extract_plan(small_instance, index, values)


def test_encode_plan_satisfies_all_rows(small_instance):
    problem, index = build_deterministic(small_instance, time_limit=30)
    sol = solve_mip(problem)
    plan = extract_plan(small_instance, index, sol.values)
    values = encode_plan(small_instance, index, plan)
    for row in problem.lp.rows:
        assert row.satisfied(values, tol=1e-6)
    assert problem.lp.objective @ values == pytest.approx(sol.objective, abs=1e-5)


def test_canonical_relabel_orders_identical_vehicles():
    inst = generate_scenario(ScenarioConfig(seed=3, n_v=3, n_m=2, n_av=1, n_am=1))
    # make all three vehicles exactly identical (same spot, same costs)
    loc = inst.vehicles[0].start_location
    for k in (1, 2):
        inst.vehicles[k].start_location = loc
        inst.vehicles[k].terminal_location = loc
        for (kk, i, j) in list(inst.edge_costs):
            if kk == k:
                del inst.edge_costs[(kk, i, j)]
        for (kk, i, j) in list(inst.travel_times):
            if kk == k:
                del inst.travel_times[(kk, i, j)]

    def relabel(node, frm, to):
        if inst.is_task_node(node):
            return node
        return inst.start_node(to) if node == inst.start_node(frm) else inst.terminal_node(to)

    for k in (1, 2):
        for (kk, i, j), g in list(inst.edge_costs.items()):
            if kk == 0:
                inst.edge_costs[(k, relabel(i, 0, k), relabel(j, 0, k))] = g
        for (kk, i, j), t in list(inst.travel_times.items()):
            if kk == 0:
                inst.travel_times[(k, relabel(i, 0, k), relabel(j, 0, k))] = t
    validate_instance(inst)

    plan = Plan(
        routes={0: [], 1: [inst.start_node(1), 1, inst.terminal_node(1)],
                2: [inst.start_node(2), 0, inst.terminal_node(2)]},
        task_teams={0: [2], 1: [1]},
        start_times={0: 5.0, 1: 5.0, inst.terminal_node(1): 9.0, inst.terminal_node(2): 8.0,
                     inst.terminal_node(0): 0.0},
        energy_cost=1.0, time_penalty=0.0)
    fixed = canonical_relabel(inst, plan)
    # vehicle 0 takes the min-task route, vehicle 1 the other, vehicle 2 idles
    assert fixed.routes[0][1:-1] == [0]
    assert fixed.routes[1][1:-1] == [1]
    assert fixed.routes[2] == []
    assert fixed.start_times[inst.terminal_node(0)] == 8.0
    assert fixed.start_times[inst.terminal_node(2)] == 0.0


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def test_instance_json_roundtrip(small_instance):
    text = instance_to_json(small_instance)
    again = instance_from_json(text)
    assert instance_to_json(again) == text
    assert again.edge_costs.keys() == small_instance.edge_costs.keys()
    key = next(iter(again.edge_costs))
    assert again.edge_costs[key] == small_instance.edge_costs[key]
    assert '"second_moment": "variance"' in text


def test_plan_dict_roundtrip(small_instance):
    problem, index = build_deterministic(small_instance, time_limit=30)
    sol = solve_mip(problem)
    plan = extract_plan(small_instance, index, sol.values)
    doc = plan_to_dict(small_instance, plan)
    again = plan_from_dict(small_instance, doc)
    assert again.routes == plan.routes
    assert again.energy_cost == plan.energy_cost
    assert plan_to_dict(small_instance, again) == doc
