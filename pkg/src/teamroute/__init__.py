"""Stochastic team formation, routing, and scheduling for heterogeneous
vehicle fleets under Gaussian travel-energy uncertainty."""

from .numerics import GaussianScalar, std_normal_cdf, std_normal_quantile, interval_probability
from .model import (
    AllOf,
    AnyOf,
    Atom,
    Capability,
    Plan,
    ProblemInstance,
    RescueVehicle,
    Task,
    Vehicle,
    build_deterministic,
    check_plan,
    extract_plan,
    instance_from_json,
    instance_to_json,
)
from .stochastic import (
    SolveReport,
    SolveStatus,
    ccp_check,
    recourse_cost,
    solve_ccp,
    solve_deterministic,
    solve_spr,
)
from .energymap import EnergyMap, GpHyperparams, GridSpec, astar_path, fit_gp, path_distribution
from .simulate import RolloutReport, rollout
from .cli import ScenarioConfig, brute_force_oracle, encode_practical_case, generate_scenario

__version__ = "0.1.0"
