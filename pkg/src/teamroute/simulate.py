"""Monte Carlo rollout of a plan under sampled edge energies.

Every sample draws each selected edge's cost independently from its
Gaussian (clamped below at 0 — physical energies are nonnegative; the clamp
fraction is reported since the analytic model does not clamp). A vehicle
fails whenever its cumulative route cost first exceeds
(failures so far + 1) * capacity; each failure prices the rescue round trip
plus the same-type replacement's start-to-target expected cost, exactly as
the analytic recourse does.

Per-vehicle sampling uses seed substreams `default_rng([seed, vehicle])`, so
workers may partition by vehicle and merge reports by summation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import Plan, ProblemInstance

__all__ = ["VehicleRollout", "RolloutReport", "rollout"]


@dataclass
class VehicleRollout:
    vehicle: int
    failure_probability: float
    failure_se: float
    mean_failures: float
    mean_recourse: float
    recourse_se: float
    mean_energy: float
    energy_se: float
    clamp_fraction: float


@dataclass
class RolloutReport:
    samples: int
    vehicles: list[VehicleRollout] = field(default_factory=list)
    total_recourse_mean: float = 0.0
    total_recourse_se: float = 0.0
    total_energy_mean: float = 0.0
    total_energy_se: float = 0.0
    notes: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["vehicle,failure_probability,failure_se,mean_failures,"
                 "mean_recourse,recourse_se,mean_energy,energy_se,clamp_fraction"]
        for v in self.vehicles:
            lines.append(f"{v.vehicle},{v.failure_probability},{v.failure_se},"
                         f"{v.mean_failures},{v.mean_recourse},{v.recourse_se},"
                         f"{v.mean_energy},{v.energy_se},{v.clamp_fraction}")
        lines.append(f"total,,,,{self.total_recourse_mean},{self.total_recourse_se},"
                     f"{self.total_energy_mean},{self.total_energy_se},")
        return "\n".join(lines) + "\n"


def _se(values: np.ndarray) -> float:
    n = values.size
    if n < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(n))


def _crossings(cum: np.ndarray, budget: float) -> np.ndarray:
    """Strict threshold count: #{l >= 1 : l * budget < cum}, elementwise."""
    return np.maximum(0, np.ceil(cum / budget) - 1).astype(np.int64)


def rollout(inst: ProblemInstance, plan: Plan, n_samples: int, seed: int) -> RolloutReport:
    """Simulate the plan n_samples times; deterministic given the seed."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    report = RolloutReport(samples=n_samples)
    if inst.rescue is None:
        report.notes.append("no rescue table in the instance; recourse priced at 0")
    total_recourse = np.zeros(n_samples)
    total_energy = np.zeros(n_samples)
    for k in range(inst.n_v):
        route = plan.routes.get(k, [])
        if not route:
            report.vehicles.append(VehicleRollout(k, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0))
            continue
        edges = list(zip(route, route[1:]))
        mu = np.array([inst.mean(k, i, j) for (i, j) in edges])
        sd = np.array([math.sqrt(inst.gaussian(k, i, j).variance) for (i, j) in edges])
        unit = np.zeros(len(edges))
        if inst.rescue is not None:
            s_k = inst.start_node(k)
            unit = np.array([
                inst.mean(k, s_k, j) + inst.rescue.to_node[j] + inst.rescue.back_node[j]
                for (_, j) in edges
            ])
        rng = np.random.default_rng([seed, k])
        draws = rng.normal(mu, sd, size=(n_samples, len(edges)))
        clamp_fraction = float((draws < 0).mean())
        np.clip(draws, 0.0, None, out=draws)
        cum = np.cumsum(draws, axis=1)
        budget = inst.vehicles[k].energy_capacity
        counts = _crossings(cum, budget)
        fails_per_edge = np.diff(counts, axis=1, prepend=0)
        recourse = inst.c_g * fails_per_edge @ unit
        energy = cum[:, -1]
        failed = (counts[:, -1] >= 1).astype(float)
        report.vehicles.append(VehicleRollout(
            vehicle=k,
            failure_probability=float(failed.mean()),
            failure_se=_se(failed),
            mean_failures=float(counts[:, -1].mean()),
            mean_recourse=float(recourse.mean()),
            recourse_se=_se(recourse),
            mean_energy=float(energy.mean()),
            energy_se=_se(energy),
            clamp_fraction=clamp_fraction,
        ))
        total_recourse += recourse
        total_energy += energy
    report.total_recourse_mean = float(total_recourse.mean())
    report.total_recourse_se = _se(total_recourse)
    report.total_energy_mean = float(total_energy.mean())
    report.total_energy_se = _se(total_energy)
    return report
