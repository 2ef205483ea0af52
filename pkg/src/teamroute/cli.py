"""Scenario generation, experiment orchestration, and the command line.

Everything here is driven by explicit seeds: a (config, seed) pair always
regenerates the identical instance file, and every emitted table row records
the seeds it was run with.
"""
from __future__ import annotations

import argparse
import itertools
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .energymap import (
    EnergyMap,
    GpHyperparams,
    GridSpec,
    build_edge_costs,
    fit_gp,
    se_kernel,
)
from .model import (
    AllOf,
    AnyOf,
    Atom,
    Capability,
    ProblemInstance,
    RescueVehicle,
    Task,
    ValidationError,
    Vehicle,
    check_plan,
    instance_from_json,
    instance_to_json,
    plan_from_dict,
)
from .numerics import GaussianScalar, std_normal_quantile
from .simulate import rollout
from .stochastic import (
    SolveReport,
    SolveStatus,
    recourse_cost,
    solve_ccp,
    solve_deterministic,
    solve_spr,
)

__all__ = [
    "ScenarioConfig",
    "OracleOutcome",
    "generate_scenario",
    "brute_force_oracle",
    "encode_practical_case",
    "build_practical_case",
    "run_experiment_suite",
    "main",
]

ORACLE_MAX_VEHICLES = 3
ORACLE_MAX_TASKS = 3
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_TIME_LIMIT = 3
EXIT_INFEASIBLE = 4


# ---------------------------------------------------------------------------
# scenario generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs for the random computational-study instances.

    c_sigma scales the edge cost's standard deviation by default
    (variance = (c_sigma * distance)^2); set sigma_is_std=False to read it
    as a variance rate instead. The choice is recorded in the instance file.
    """

    seed: int
    n_v: int = 6
    n_m: int = 6
    n_a: int = 2
    n_av: int = 2
    n_am: int = 3
    c_mu: float = 30.0
    c_sigma: float = 6.0
    capacity: float = 40000.0
    beta: float = 0.95
    c_g: float = 1.0
    c_q: float = 1.0
    sigma_is_std: bool = True
    time_scale: float = 0.01
    service_time: float = 1.0
    task_region: tuple = ((0.0, 640.0), (0.0, 480.0))
    start_region: tuple = ((310.0, 330.0), (230.0, 250.0))

    def validate(self) -> None:
        problems = []
        for name in ("n_v", "n_m", "n_a", "n_av", "n_am"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.c_sigma < 0:
            problems.append("c_sigma must be >= 0")
        if self.capacity <= 0:
            problems.append("capacity must be positive")
        if not 0.0 < self.beta < 1.0:
            problems.append("beta must lie in (0, 1)")
        if problems:
            raise ValidationError(problems)


def _type_capabilities(t: int, n_a: int) -> tuple[float, ...]:
    caps = [0.0] * n_a
    caps[t % n_a] = 1.0
    if t >= n_a:
        caps[(t + 1) % n_a] = 1.0
    return tuple(caps)


def _type_requirement(r: int, n_a: int):
    a, b = r % n_a, (r + 1) % n_a
    shape = r % 3
    if shape == 0 or n_a == 1:
        return Atom(a, 1.0)
    if shape == 1:
        return AllOf((Atom(a, 1.0), Atom(b, 1.0)))
    return AnyOf((Atom(a, 1.0), Atom(b, 1.0)))


def generate_scenario(cfg: ScenarioConfig) -> ProblemInstance:
    """Random instance per the computational-study recipe.

    Tasks land uniformly in the task region, each vehicle's coincident
    start/terminal in the start region; the cost of an edge of length d is
    Gaussian with mean c_mu*d and std c_sigma*d. Vehicle/task types are
    assigned round-robin.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    (tx0, tx1), (ty0, ty1) = cfg.task_region
    task_locs = [(float(rng.uniform(tx0, tx1)), float(rng.uniform(ty0, ty1)))
                 for _ in range(cfg.n_m)]
    (sx0, sx1), (sy0, sy1) = cfg.start_region
    veh_locs = [(float(rng.uniform(sx0, sx1)), float(rng.uniform(sy0, sy1)))
                for _ in range(cfg.n_v)]

    capabilities = [Capability(a, f"cap{a}") for a in range(cfg.n_a)]
    vehicles = [
        Vehicle(id=k, type_label=f"type{k % cfg.n_av}",
                capabilities=_type_capabilities(k % cfg.n_av, cfg.n_a),
                energy_capacity=cfg.capacity, beta=cfg.beta,
                start_location=veh_locs[k], terminal_location=veh_locs[k])
        for k in range(cfg.n_v)
    ]
    tasks = [
        Task(id=i, location=task_locs[i], requirement=_type_requirement(i % cfg.n_am, cfg.n_a),
             service_times={k: cfg.service_time for k in range(cfg.n_v)})
        for i in range(cfg.n_m)
    ]

    inst = ProblemInstance(capabilities=capabilities, vehicles=vehicles, tasks=tasks,
                           edge_costs={}, travel_times={}, c_q=cfg.c_q, c_g=cfg.c_g)

    def location(node: int) -> tuple[float, float]:
        if inst.is_task_node(node):
            return task_locs[node]
        k = (node - inst.n_m) % inst.n_v
        return veh_locs[k]

    def cost_of(d: float) -> GaussianScalar:
        if cfg.sigma_is_std:
            return GaussianScalar(cfg.c_mu * d, (cfg.c_sigma * d) ** 2)
        return GaussianScalar(cfg.c_mu * d, cfg.c_sigma * d)

    for k in range(cfg.n_v):
        for (i, j) in inst.routing_edges(k):
            d = math.dist(location(i), location(j))
            inst.edge_costs[(k, i, j)] = cost_of(d)
            inst.travel_times[(k, i, j)] = cfg.time_scale * d
        s, u = inst.start_node(k), inst.terminal_node(k)
        inst.edge_costs[(k, s, u)] = cost_of(math.dist(location(s), location(u)))

    rescue_loc = ((sx0 + sx1) / 2.0, (sy0 + sy1) / 2.0)
    targets = list(range(cfg.n_m)) + [inst.terminal_node(k) for k in range(cfg.n_v)]
    inst.rescue = RescueVehicle(
        location=rescue_loc,
        to_node={n: cfg.c_mu * math.dist(rescue_loc, location(n)) for n in targets},
        back_node={n: cfg.c_mu * math.dist(location(n), rescue_loc) for n in targets},
    )
    inst.meta = {
        "generator": "computational-study",
        "seed": cfg.seed,
        "second_moment": "variance",
        "c_sigma_is_std": cfg.sigma_is_std,
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in vars(cfg).items() if k != "self"},
    }
    return inst


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

@dataclass
class OracleOutcome:
    feasible: bool
    objective: float | None
    routes: dict[int, tuple[int, ...]] | None


def _min_schedule(inst: ProblemInstance, sequences: dict[int, tuple[int, ...]]):
    """Componentwise-minimal start times, or None if precedence cycles."""
    q = {m: 0.0 for m in range(inst.n_m)}
    constraints = []
    for k, seq in sequences.items():
        if not seq:
            continue
        s = inst.start_node(k)
        constraints.append((None, seq[0], inst.travel_times[(k, s, seq[0])]))
        for a, b in zip(seq, seq[1:]):
            constraints.append((a, b, inst.service_time(k, a) + inst.travel_times[(k, a, b)]))
    for _ in range(inst.n_m + 2):
        changed = False
        for a, b, lag in constraints:
            base = 0.0 if a is None else q[a]
            if base + lag > q[b] + 1e-12:
                q[b] = base + lag
                changed = True
        if not changed:
            break
    else:
        return None  # still changing: positive cycle across shared tasks
    terminal_q = {}
    for k, seq in sequences.items():
        if seq:
            last = seq[-1]
            u = inst.terminal_node(k)
            terminal_q[k] = q[last] + inst.service_time(k, last) + inst.travel_times[(k, last, u)]
        else:
            terminal_q[k] = 0.0
    return q, terminal_q


def brute_force_oracle(inst: ProblemInstance, models=("deterministic", "ccp", "spr")) -> dict[str, OracleOutcome]:
    """Exhaustive exact minima for tiny instances (n_v <= 3, n_m <= 3).

    Enumerates every assignment of an ordered task subset to every vehicle,
    evaluates requirements, schedules, energy/chance feasibility, and the
    analytic recourse, and returns per-model optima.
    """
    if inst.n_v > ORACLE_MAX_VEHICLES or inst.n_m > ORACLE_MAX_TASKS:
        raise ValueError(
            f"oracle is capped at {ORACLE_MAX_VEHICLES} vehicles / {ORACLE_MAX_TASKS} tasks")
    tasks = list(range(inst.n_m))
    sequences = [seq for r in range(inst.n_m + 1) for seq in itertools.permutations(tasks, r)]

    per_vehicle = []
    for k in range(inst.n_v):
        data = {}
        for seq in sequences:
            route = [inst.start_node(k), *seq, inst.terminal_node(k)] if seq else []
            mean = var = 0.0
            for (i, j) in zip(route, route[1:]):
                g = inst.gaussian(k, i, j)
                mean += g.mean
                var += g.variance
            data[seq] = (mean, var, route)
        per_vehicle.append(data)

    quantiles = [std_normal_quantile(v.beta) for v in inst.vehicles]
    recourse_cache: dict[tuple[int, tuple], float] = {}

    def recourse_of(k: int, seq: tuple) -> float:
        if (k, seq) not in recourse_cache:
            recourse_cache[(k, seq)] = recourse_cost(inst, per_vehicle[k][seq][2], k).g
        return recourse_cache[(k, seq)]

    best = {m: OracleOutcome(False, None, None) for m in models}
    alpha_cache: dict[frozenset, list[float]] = {}
    n_a = len(inst.capabilities)

    for combo in itertools.product(sequences, repeat=inst.n_v):
        covered = True
        for m in tasks:
            team = frozenset(k for k in range(inst.n_v) if m in combo[k])
            if not team:
                covered = False
                break
            if team not in alpha_cache:
                alpha_cache[team] = [sum(inst.vehicles[k].capabilities[a] for k in team)
                                     for a in range(n_a)]
            if not inst.tasks[m].requirement.evaluate(alpha_cache[team]):
                covered = False
                break
        if not covered:
            continue
        sched = _min_schedule(inst, {k: combo[k] for k in range(inst.n_v)})
        if sched is None:
            continue
        _, terminal_q = sched
        f = sum(per_vehicle[k][combo[k]][0] for k in range(inst.n_v))
        f += inst.c_q * sum(terminal_q.values())

        det_ok = all(per_vehicle[k][combo[k]][0] <= inst.vehicles[k].energy_capacity + 1e-9
                     for k in range(inst.n_v))
        if "deterministic" in models and det_ok:
            o = best["deterministic"]
            if not o.feasible or f < o.objective:
                best["deterministic"] = OracleOutcome(True, f, dict(enumerate(combo)))
        if "ccp" in models:
            ccp_ok = all(
                quantiles[k] * math.sqrt(per_vehicle[k][combo[k]][1]) + per_vehicle[k][combo[k]][0]
                <= inst.vehicles[k].energy_capacity + 1e-9
                for k in range(inst.n_v))
            if ccp_ok:
                o = best["ccp"]
                if not o.feasible or f < o.objective:
                    best["ccp"] = OracleOutcome(True, f, dict(enumerate(combo)))
        if "spr" in models and det_ok:
            total = f + sum(recourse_of(k, combo[k]) for k in range(inst.n_v))
            o = best["spr"]
            if not o.feasible or total < o.objective:
                best["spr"] = OracleOutcome(True, total, dict(enumerate(combo)))
    return best


# ---------------------------------------------------------------------------
# practical case
# ---------------------------------------------------------------------------

PRACTICAL_SEED = 7041
PRACTICAL_CAPABILITIES = ["scout", "move_fast", "transport", "move_quietly",
                          "shoot_smoke", "break_barriers", "clear_mines", "armor"]
PRACTICAL_TYPES = [
    ("armed_vehicle", (1, 1, 1, 0, 0, 0, 0, 1)),
    ("scout_vehicle", (1, 1, 0, 1, 0, 0, 0, 0)),
    ("tank", (0, 0, 0, 0, 0, 0, 0, 20)),
    ("stryker", (0, 0, 0, 0, 1, 0, 0, 5)),
    ("earthmover", (0, 0, 0, 0, 0, 1, 0, 0)),
    ("minesweeper", (0, 0, 0, 0, 0, 0, 1, 0)),
]
PRACTICAL_WEIGHTS = [2.36, 0.879, 61.3, 19.0, 24.4, 10.0]        # tons
PRACTICAL_CAPACITIES = [25.0, 7.25, 500.0, 160.0, 134.0, 80.0]   # x 5700
PRACTICAL_CAPACITY_SCALE = 5700.0
PRACTICAL_TYPE_COUNTS = [3, 2, 2, 5, 3, 3]                        # 18 total
PRACTICAL_RESCUE_WEIGHT = 1.0
# (x0, y0, w, h) obstacle blocks in cell coordinates; placed away from the
# borders and each other so the free space stays connected
PRACTICAL_OBSTACLES = [(15, 20, 10, 8), (60, 15, 9, 12), (30, 60, 12, 9), (70, 65, 8, 8)]


def practical_requirements() -> list:
    """The explore-and-breach requirement functions (seven shapes, doubled)."""
    armor = 7
    shapes = [
        AllOf((Atom(0), Atom(1))),                       # scout: scout AND fast
        AllOf((Atom(0), Atom(1), Atom(3))),              # quiet scout
        Atom(4),                                         # smoke cover
        AllOf((Atom(5), Atom(6), Atom(armor, 1.0))),     # lane creation
        AllOf((Atom(5), Atom(armor, 10.0))),             # breach
        Atom(armor, 20.0),                               # enemy push back
        Atom(2),                                         # materials transport
    ]
    return shapes + shapes


@dataclass
class PracticalCase:
    instance: ProblemInstance
    emap: EnergyMap
    gp_mean_error: float
    gp_max_error: float
    export_notes: list[str] = field(default_factory=list)


def build_practical_case(seed: int = PRACTICAL_SEED) -> PracticalCase:
    """Ground-truth map, GP fit, and the 18-vehicle / 14-task instance.

    The truth field is drawn jointly (squared-exponential prior, sigma_f=6,
    l_f=100, mean 30) at the 100 sample sites plus a held-out evaluation
    subset; the full 100x100 joint draw is never materialized.
    """
    rng = np.random.default_rng(seed)
    grid = GridSpec(100, 100, 10.0, (0.0, 0.0))
    obstacles = np.zeros((grid.height, grid.width), dtype=bool)
    for (x0, y0, w, h) in PRACTICAL_OBSTACLES:
        obstacles[y0:y0 + h, x0:x0 + w] = True

    def random_free_position():
        while True:
            p = (float(rng.uniform(0, 1000)), float(rng.uniform(0, 1000)))
            c = grid.cell_of(p)
            if not obstacles[c[1], c[0]]:
                return p

    sample_positions = np.array([random_free_position() for _ in range(100)])
    free_cells = [(ix, iy) for iy in range(grid.height) for ix in range(grid.width)
                  if not obstacles[iy, ix]]
    eval_idx = rng.choice(len(free_cells), size=300, replace=False)
    eval_cells = [free_cells[i] for i in eval_idx]
    eval_positions = np.array([grid.center(c) for c in eval_cells])

    truth_hyper = GpHyperparams(signal=6.0, length_scale=100.0, noise=0.0, prior_mean=30.0)
    joint = np.vstack([sample_positions, eval_positions])
    gram = se_kernel(joint, joint, truth_hyper)
    gram[np.diag_indices_from(gram)] += 1e-8  # jitter for the smooth kernel
    chol = np.linalg.cholesky(gram)
    truth = truth_hyper.prior_mean + chol @ rng.standard_normal(len(joint))
    truth = np.clip(truth, 0.0, None)  # unit energies are physically nonnegative
    sample_values = truth[:100]
    eval_truth = truth[100:]

    fit_hyper = GpHyperparams(signal=6.0, length_scale=100.0, noise=1.0, prior_mean=30.0)
    emap = fit_gp(list(zip(map(tuple, sample_positions), sample_values)), grid,
                  fit_hyper, obstacles)
    errors = np.abs(emap.mean_at(eval_cells) - eval_truth)
    gp_mean_error, gp_max_error = float(errors.mean()), float(errors.max())

    # fleet
    capabilities = [Capability(a, name) for a, name in enumerate(PRACTICAL_CAPABILITIES)]
    vehicles = []
    center = (500.0, 500.0)
    for t, count in enumerate(PRACTICAL_TYPE_COUNTS):
        label, caps = PRACTICAL_TYPES[t]
        for _ in range(count):
            vehicles.append(Vehicle(
                id=len(vehicles), type_label=label,
                capabilities=tuple(float(c) for c in caps),
                energy_capacity=PRACTICAL_CAPACITIES[t] * PRACTICAL_CAPACITY_SCALE,
                beta=0.95, start_location=center, terminal_location=center))
    requirements = practical_requirements()
    task_locs = [random_free_position() for _ in range(14)]
    tasks = [Task(id=i, location=task_locs[i], requirement=requirements[i],
                  service_times={v.id: 1.0 for v in vehicles})
             for i in range(14)]
    inst = ProblemInstance(capabilities=capabilities, vehicles=vehicles, tasks=tasks,
                           edge_costs={}, travel_times={}, c_q=1.0, c_g=1.0)

    node_locations = {m: task_locs[m] for m in range(14)}
    weights = {}
    pairs = []
    for k, v in enumerate(vehicles):
        node_locations[inst.start_node(k)] = center
        node_locations[inst.terminal_node(k)] = center
        weights[k] = PRACTICAL_WEIGHTS[[t[0] for t in PRACTICAL_TYPES].index(v.type_label)]
        s, u = inst.start_node(k), inst.terminal_node(k)
        pairs += [(s, m) for m in range(14)]
        pairs += [(m, u) for m in range(14)]
        pairs.append((s, u))
    pairs += [(i, j) for i in range(14) for j in range(14) if i != j]

    table, paths, notes = build_edge_costs(emap, node_locations, weights, pairs)
    inst.edge_costs = table
    for k in range(inst.n_v):
        for (i, j) in inst.routing_edges(k):
            inst.travel_times[(k, i, j)] = 1.0  # any travel takes one unit of time

    # the rescue truck shares the center location with the fleet starts
    rescue_targets = list(range(14)) + [inst.terminal_node(k) for k in range(inst.n_v)]
    rescue_to, rescue_back = {}, {}
    for n in rescue_targets:
        if n < 14:
            rescue_to[n] = paths[(inst.start_node(0), n)].distribution.mean * PRACTICAL_RESCUE_WEIGHT
            rescue_back[n] = paths[(n, inst.terminal_node(0))].distribution.mean * PRACTICAL_RESCUE_WEIGHT
        else:
            rescue_to[n] = 0.0
            rescue_back[n] = 0.0
    inst.rescue = RescueVehicle(location=center, to_node=rescue_to, back_node=rescue_back)
    inst.meta = {
        "generator": "practical-case",
        "seed": seed,
        "second_moment": "variance",
        "gp_hyperparams": {"signal": 6.0, "length_scale": 100.0, "noise": 1.0, "prior_mean": 30.0},
        "gp_mean_error": gp_mean_error,
        "gp_max_error": gp_max_error,
        "vehicle_weights_tons": PRACTICAL_WEIGHTS,
        "export_notes": notes,
    }
    return PracticalCase(inst, emap, gp_mean_error, gp_max_error, notes)


def encode_practical_case(seed: int = PRACTICAL_SEED) -> ProblemInstance:
    return build_practical_case(seed).instance


# ---------------------------------------------------------------------------
# experiment suites
# ---------------------------------------------------------------------------

SUITES = ("vehicle_sweep", "task_sweep", "tasktype_sweep", "sigma_sweep", "practical")


def _suite_rows(name: str):
    base = dict(n_m=6, n_a=2, n_av=2, n_am=3, c_sigma=6.0)
    if name == "vehicle_sweep":
        return [("n_v", dict(base, n_v=v)) for v in (6, 8, 10, 20, 50)]
    if name == "task_sweep":
        rows = []
        for m in (6, 12, 18, 24, 30):
            cfg = dict(base, n_v=6, n_m=m)
            if m >= 24:
                cfg["capacity"] = 80000.0  # larger tanks for the long-route rows
            rows.append(("n_m", cfg))
        return rows
    if name == "tasktype_sweep":
        return [("n_am", dict(n_v=6, n_m=6, n_a=3, n_av=3, c_sigma=6.0, n_am=t))
                for t in (1, 2, 4, 6)]
    if name == "sigma_sweep":
        return [("c_sigma", dict(base, n_v=6, c_sigma=s)) for s in (3.0, 6.0, 9.0, 12.0, 15.0)]
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")


def _solve_all(inst: ProblemInstance, time_limit: float) -> dict[str, SolveReport]:
    det = solve_deterministic(inst, time_limit=time_limit)
    ccp = solve_ccp(inst, time_limit=time_limit, warm_plan=det.plan)
    warm = ccp.plan if ccp.plan is not None else det.plan
    spr = solve_spr(inst, time_limit=time_limit, warm_plan=warm)
    return {"deterministic": det, "ccp": ccp, "spr": spr}


def run_experiment_suite(
    name: str,
    out_dir,
    seeds=(0, 1, 2, 3, 4),
    time_limit: float = 500.0,
    row_filter=None,
) -> list[dict]:
    """Solve a sweep under all three models and emit CSV tables.

    Writes <name>.csv (per-row means, mirroring the study tables) and
    <name>_runs.csv (every individual run with its seed and status).
    Time-limit hits are recorded per row, not fatal. Returns the mean rows.
    """
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if name == "practical":
        return _run_practical_suite(out, time_limit, PRACTICAL_SEED)

    rows = _suite_rows(name)
    if row_filter is not None:
        rows = [r for r in rows if row_filter(r[1])]
    run_lines = ["param,value,seed,model,status,f,g,objective,wall_time,nodes,cuts"]
    mean_rows: list[dict] = []
    for param, cfg_kwargs in rows:
        stats = {m: {"f": [], "fg": [], "t": [], "limit": 0, "infeasible": 0}
                 for m in ("deterministic", "ccp", "spr")}
        for seed in seeds:
            cfg = ScenarioConfig(seed=seed, **cfg_kwargs)
            inst = generate_scenario(cfg)
            reports = _solve_all(inst, time_limit)
            for model_name, rep in reports.items():
                st = stats[model_name]
                if rep.status is SolveStatus.INFEASIBLE:
                    st["infeasible"] += 1
                elif rep.status in (SolveStatus.FEASIBLE_LIMIT, SolveStatus.UNRESOLVED_LIMIT):
                    st["limit"] += 1
                if rep.f is not None:
                    st["f"].append(rep.f)
                    st["fg"].append(rep.objective)
                st["t"].append(rep.wall_time)
                run_lines.append(
                    f"{param},{cfg_kwargs[param]},{seed},{model_name},{rep.status.value},"
                    f"{_num(rep.f)},{_num(rep.g)},{_num(rep.objective)},"
                    f"{rep.wall_time:.3f},{rep.node_count},{rep.cut_count}")
        row = {
            "param": param,
            "value": cfg_kwargs[param],
            "seeds": list(seeds),
            "f_det": _mean(stats["deterministic"]["f"]),
            "time_det": _mean(stats["deterministic"]["t"]),
            "f_ccp": _mean(stats["ccp"]["f"]),
            "time_ccp": _mean(stats["ccp"]["t"]),
            "f_spr": _mean(stats["spr"]["f"]),
            "fg_spr": _mean(stats["spr"]["fg"]),
            "time_spr": _mean(stats["spr"]["t"]),
            "limit_hits": {m: stats[m]["limit"] for m in stats},
            "infeasible": {m: stats[m]["infeasible"] for m in stats},
        }
        mean_rows.append(row)

    header = ("param,value,seeds,f_det,time_det,f_ccp,time_ccp,f_spr,fg_spr,time_spr,"
              "limit_det,limit_ccp,limit_spr,infeas_det,infeas_ccp,infeas_spr")
    lines = [header]
    for r in mean_rows:
        lines.append(
            f"{r['param']},{r['value']},{' '.join(map(str, r['seeds']))},"
            f"{_num(r['f_det'])},{_num(r['time_det'])},{_num(r['f_ccp'])},{_num(r['time_ccp'])},"
            f"{_num(r['f_spr'])},{_num(r['fg_spr'])},{_num(r['time_spr'])},"
            f"{r['limit_hits']['deterministic']},{r['limit_hits']['ccp']},{r['limit_hits']['spr']},"
            f"{r['infeasible']['deterministic']},{r['infeasible']['ccp']},{r['infeasible']['spr']}")
    (out / f"{name}.csv").write_text("\n".join(lines) + "\n")
    (out / f"{name}_runs.csv").write_text("\n".join(run_lines) + "\n")
    return mean_rows


def _run_practical_suite(out, time_limit: float, seed: int = PRACTICAL_SEED) -> list[dict]:
    case = build_practical_case(seed)
    inst = case.instance
    det = solve_deterministic(inst, time_limit=min(time_limit, 150.0))
    ccp = solve_ccp(inst, time_limit=time_limit, warm_plan=det.plan)
    warm = ccp.plan if ccp.plan is not None else det.plan
    spr = solve_spr(inst, time_limit=time_limit, warm_plan=warm)
    rows = []
    for rep in (ccp, spr):
        teams_ok = rep.plan is not None and not check_plan(inst, rep.plan)
        rows.append({
            "model": rep.model,
            "status": rep.status.value,
            "f": rep.f,
            "g": rep.g,
            "objective": rep.objective,
            "wall_time": rep.wall_time,
            "teams_ok": teams_ok,
            "gp_mean_error": case.gp_mean_error,
            "gp_max_error": case.gp_max_error,
        })
    lines = ["model,status,f,g,objective,wall_time,teams_ok,gp_mean_error,gp_max_error"]
    for r in rows:
        lines.append(f"{r['model']},{r['status']},{_num(r['f'])},{_num(r['g'])},"
                     f"{_num(r['objective'])},{r['wall_time']:.3f},{r['teams_ok']},"
                     f"{r['gp_mean_error']:.4f},{r['gp_max_error']:.4f}")
    (out / "practical.csv").write_text("\n".join(lines) + "\n")
    for rep in (ccp, spr):
        if rep.plan is not None:
            (out / f"practical_{rep.model}_plan.json").write_text(
                json.dumps(rep.to_dict(inst), indent=1, sort_keys=True))
    return rows


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def _num(v) -> str:
    return "" if v is None else f"{v:.6f}"


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-v", type=int, default=6)
    p.add_argument("--n-m", type=int, default=6)
    p.add_argument("--n-a", type=int, default=2)
    p.add_argument("--n-av", type=int, default=2)
    p.add_argument("--n-am", type=int, default=3)
    p.add_argument("--c-mu", type=float, default=30.0)
    p.add_argument("--c-sigma", type=float, default=6.0)
    p.add_argument("--capacity", type=float, default=40000.0)
    p.add_argument("--beta", type=float, default=0.95)
    p.add_argument("--c-g", type=float, default=1.0)
    p.add_argument("--c-q", type=float, default=1.0)
    p.add_argument("--sigma-as-variance", action="store_true",
                   help="read c_sigma as a variance rate instead of a std rate")


def _config_from_args(args) -> ScenarioConfig:
    return ScenarioConfig(
        seed=args.seed, n_v=args.n_v, n_m=args.n_m, n_a=args.n_a, n_av=args.n_av,
        n_am=args.n_am, c_mu=args.c_mu, c_sigma=args.c_sigma, capacity=args.capacity,
        beta=args.beta, c_g=args.c_g, c_q=args.c_q, sigma_is_std=not args.sigma_as_variance)


def _status_code(status: SolveStatus) -> int:
    if status is SolveStatus.OPTIMAL:
        return EXIT_OK
    if status is SolveStatus.INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_TIME_LIMIT


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="teamroute",
                                     description="stochastic heterogeneous team routing")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a random instance file")
    _add_scenario_flags(p_gen)
    p_gen.add_argument("--out", required=True)

    p_solve = sub.add_parser("solve", help="solve an instance file")
    p_solve.add_argument("--model", choices=("det", "ccp", "spr"), required=True)
    p_solve.add_argument("--instance", required=True)
    p_solve.add_argument("--time-limit", type=float, default=500.0)
    p_solve.add_argument("--out", help="write the solver report as JSON")

    p_suite = sub.add_parser("suite", help="run an experiment sweep")
    p_suite.add_argument("--name", choices=SUITES, required=True)
    p_suite.add_argument("--out-dir", required=True)
    p_suite.add_argument("--seeds", type=int, default=5, help="seeds 0..n-1 per row")
    p_suite.add_argument("--time-limit", type=float, default=500.0)

    p_roll = sub.add_parser("rollout", help="Monte Carlo validation of a plan")
    p_roll.add_argument("--instance", required=True)
    p_roll.add_argument("--plan", required=True, help="solver report JSON")
    p_roll.add_argument("--samples", type=int, default=10000)
    p_roll.add_argument("--seed", type=int, required=True)
    p_roll.add_argument("--out", help="write the rollout report CSV")

    p_oracle = sub.add_parser("oracle", help="exhaustive optima for tiny instances")
    p_oracle.add_argument("--instance", required=True)

    p_prac = sub.add_parser("practical", help="run the practical study case")
    p_prac.add_argument("--out-dir", required=True)
    p_prac.add_argument("--time-limit", type=float, default=500.0)
    p_prac.add_argument("--seed", type=int, default=PRACTICAL_SEED)

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def _dispatch(args) -> int:
    from pathlib import Path

    if args.command == "gen":
        inst = generate_scenario(_config_from_args(args))
        Path(args.out).write_text(instance_to_json(inst))
        print(f"wrote {args.out}")
        return EXIT_OK

    if args.command == "solve":
        inst = instance_from_json(Path(args.instance).read_text())
        solver = {"det": solve_deterministic, "ccp": solve_ccp, "spr": solve_spr}[args.model]
        report = solver(inst, time_limit=args.time_limit)
        doc = report.to_dict(inst)
        text = json.dumps(doc, indent=1, sort_keys=True)
        if args.out:
            Path(args.out).write_text(text)
        else:
            print(text)
        print(f"status: {report.status.value}  f={_num(report.f)} g={_num(report.g)}",
              file=sys.stderr)
        return _status_code(report.status)

    if args.command == "suite":
        run_experiment_suite(args.name, args.out_dir, seeds=tuple(range(args.seeds)),
                             time_limit=args.time_limit)
        print(f"suite {args.name} written to {args.out_dir}")
        return EXIT_OK

    if args.command == "rollout":
        inst = instance_from_json(Path(args.instance).read_text())
        doc = json.loads(Path(args.plan).read_text())
        plan = plan_from_dict(inst, doc["plan"] if "plan" in doc else doc)
        report = rollout(inst, plan, args.samples, args.seed)
        csv = report.to_csv()
        if args.out:
            Path(args.out).write_text(csv)
        else:
            print(csv, end="")
        return EXIT_OK

    if args.command == "oracle":
        inst = instance_from_json(Path(args.instance).read_text())
        try:
            outcome = brute_force_oracle(inst)
        except ValueError as exc:
            print(f"oracle error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        for model_name, o in outcome.items():
            obj = "infeasible" if not o.feasible else f"{o.objective:.6f}"
            print(f"{model_name}: {obj}")
        return EXIT_OK

    if args.command == "practical":
        rows = _run_practical_suite(Path(args.out_dir), args.time_limit, args.seed)
        for r in rows:
            print(f"{r['model']}: status={r['status']} f={_num(r['f'])} g={_num(r['g'])} "
                  f"teams_ok={r['teams_ok']}")
        if any(r["status"] == SolveStatus.INFEASIBLE.value for r in rows):
            return EXIT_INFEASIBLE
        if any("time-limit" in r["status"] for r in rows):
            return EXIT_TIME_LIMIT
        return EXIT_OK

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
