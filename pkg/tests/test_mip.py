import itertools

import numpy as np
import pytest

from teamroute.lp import LinearProgram, LinearRow, Relation
from teamroute.mip import (
    BranchError,
    CutDecision,
    MipProblem,
    MipStatus,
    Node,
    branch,
    solve_mip,
)


def binary_mip(c, rows, time_limit=60.0):
    n = len(c)
    lp = LinearProgram(objective=np.array(c, dtype=float), rows=rows,
                       lower=np.zeros(n), upper=np.ones(n))
    return MipProblem(lp=lp, integer_vars=list(range(n)), time_limit=time_limit)


def enumerate_binary(c, rows):
    best = None
    n = len(c)
    for bits in itertools.product((0.0, 1.0), repeat=n):
        x = np.array(bits)
        if all(r.satisfied(x) for r in rows):
            val = float(np.dot(c, x))
            if best is None or val < best:
                best = val
    return best


def test_knapsack_picks_dominant_item():
    # max 3x1 + 2x2 with x1 + x2 <= 1, encoded as minimization
    rows = [LinearRow({0: 1.0, 1: 1.0}, Relation.LE, 1.0)]
    sol = solve_mip(binary_mip([-3.0, -2.0], rows))
    assert sol.status is MipStatus.OPTIMAL
    assert sol.values[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.values[1] == pytest.approx(0.0, abs=1e-6)


def test_integral_relaxation_needs_no_branching():
    # assignment polytope is integral; a single LP solve suffices
    rows = [LinearRow({0: 1.0, 1: 1.0}, Relation.EQ, 1.0),
            LinearRow({2: 1.0, 3: 1.0}, Relation.EQ, 1.0),
            LinearRow({0: 1.0, 2: 1.0}, Relation.EQ, 1.0),
            LinearRow({1: 1.0, 3: 1.0}, Relation.EQ, 1.0)]
    sol = solve_mip(binary_mip([1.0, 2.0, 2.0, 1.0], rows))
    assert sol.status is MipStatus.OPTIMAL
    assert sol.node_count == 1
    assert sol.objective == pytest.approx(2.0, abs=1e-6)


def test_infeasible_mip():
    rows = [LinearRow({0: 1.0}, Relation.GE, 2.0)]
    sol = solve_mip(binary_mip([1.0], rows))
    assert sol.status is MipStatus.INFEASIBLE
    assert sol.values is None


def test_exactness_on_random_instances():
    rng = np.random.default_rng(11)
    for trial in range(100):
        n = int(rng.integers(2, 11))
        m = int(rng.integers(1, 7))
        c = rng.normal(size=n)
        rows = []
        for _ in range(m):
            coeffs = {j: float(rng.normal()) for j in rng.choice(n, size=min(n, 4), replace=False)}
            rows.append(LinearRow(coeffs, Relation.LE, float(rng.normal() * 1.5)))
        sol = solve_mip(binary_mip(list(c), rows))
        oracle = enumerate_binary(c, rows)
        if oracle is None:
            assert sol.status is MipStatus.INFEASIBLE
        else:
            assert sol.status is MipStatus.OPTIMAL
            assert sol.objective == pytest.approx(oracle, abs=1e-6)


def test_determinism():
    rng = np.random.default_rng(5)
    n, m = 8, 5
    c = rng.normal(size=n)
    rows = [LinearRow({j: float(rng.normal()) for j in range(n)}, Relation.LE, 1.0)
            for _ in range(m)]
    a = solve_mip(binary_mip(list(c), rows))
    b = solve_mip(binary_mip(list(c), rows))
    assert a.node_count == b.node_count
    assert a.objective == b.objective
    assert np.array_equal(a.values, b.values)


def test_branch_splits_binary():
    node = Node()
    down, up = branch(node, 0, 0.4)
    assert down.upper[0] == 0.0 and 0 not in down.lower
    assert up.lower[0] == 1.0 and 0 not in up.upper


def test_branch_splits_general_integer():
    down, up = branch(Node(), 2, 2.5)
    assert down.upper[2] == 2.0
    assert up.lower[2] == 3.0


def test_branch_rejects_integral_value():
    with pytest.raises(BranchError):
        branch(Node(), 0, 1.0)


def test_callback_cuts_exclude_solutions():
    # minimize -x1 - x2; callback refuses the all-ones point once
    c = [-1.0, -1.0]
    seen = []

    def cb(x):
        if x[0] > 0.5 and x[1] > 0.5 and not seen:
            seen.append(tuple(x))
            return CutDecision(cuts=[LinearRow({0: 1.0, 1: 1.0}, Relation.LE, 1.0)])
        return CutDecision()

    problem = binary_mip(c, [])
    problem.check_cuts = True
    sol = solve_mip(problem, cb)
    assert sol.status is MipStatus.OPTIMAL
    assert sol.objective == pytest.approx(-1.0, abs=1e-6)
    assert seen  # the cut actually triggered
    assert sol.cut_count == 1
    # replay: the accepted incumbent satisfies every pooled cut
    for cut in problem.cut_pool:
        assert cut.satisfied(sol.values)


def test_callback_incumbent_value_controls_pruning():
    # true objective (via callback) differs from the LP surrogate
    c = [-1.0, -1.0]

    def cb(x):
        return CutDecision(incumbent_value=float(-x[0] - x[1]) + 0.25)

    sol = solve_mip(binary_mip(c, []), cb)
    assert sol.status is MipStatus.OPTIMAL
    assert sol.objective == pytest.approx(-1.75, abs=1e-6)


def test_warm_incumbent_prunes_the_tree():
    problem = binary_mip([-1.0, -1.0], [])
    problem.incumbent = (np.array([1.0, 1.0]), -2.0)
    sol = solve_mip(problem)
    assert sol.status is MipStatus.OPTIMAL
    assert sol.objective == pytest.approx(-2.0)
    assert sol.node_count == 1  # root relaxation ties the incumbent and prunes
    assert np.array_equal(sol.values, np.array([1.0, 1.0]))


def test_time_limit_reports_limit_status():
    rng = np.random.default_rng(1)
    n = 16
    c = rng.normal(size=n)
    rows = [LinearRow({j: float(rng.normal()) for j in range(n)}, Relation.LE, 0.5)
            for _ in range(10)]
    problem = binary_mip(list(c), rows, time_limit=0.0)
    sol = solve_mip(problem)
    assert sol.status is MipStatus.FEASIBLE_LIMIT
