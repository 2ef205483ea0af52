"""Gaussian-process unit-energy field over an obstacle grid.

A map is fitted once from noisy point samples (squared-exponential kernel
plus observation noise, constant prior mean) and then queried for:
  * minimum expected-energy grid paths (A*, 8-connected, exact vs Dijkstra),
  * Gaussian path-cost distributions (segment-length weighted sums of the
    posterior, full covariance submatrix),
  * weight-scaled edge-cost tables for routing instances.

The posterior is kept in factored form (Cholesky of the sample Gram matrix);
covariance submatrices are extracted on demand, so a 100x100 grid never
materializes a dense 10^4 x 10^4 matrix.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .numerics import GaussianScalar

__all__ = [
    "GridSpec",
    "GpHyperparams",
    "EnergyMap",
    "PathCost",
    "MapError",
    "NoPathError",
    "SingularKernelError",
    "fit_gp",
    "astar_path",
    "dijkstra_path",
    "path_distribution",
    "build_edge_costs",
    "map_to_json",
    "map_from_json",
]

SQRT2 = math.sqrt(2.0)


class MapError(Exception):
    pass


class NoPathError(MapError):
    """Obstacles disconnect the requested endpoints."""


class SingularKernelError(MapError):
    """Duplicate noiseless samples make the kernel matrix singular."""


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)

    def center(self, cell: tuple[int, int]) -> tuple[float, float]:
        ix, iy = cell
        return (self.origin[0] + (ix + 0.5) * self.cell_size,
                self.origin[1] + (iy + 0.5) * self.cell_size)

    def cell_of(self, position) -> tuple[int, int]:
        ix = int((position[0] - self.origin[0]) / self.cell_size)
        iy = int((position[1] - self.origin[1]) / self.cell_size)
        if not (0 <= ix < self.width and 0 <= iy < self.height):
            raise MapError(f"position {position!r} lies outside the grid")
        return (ix, iy)

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height


@dataclass(frozen=True)
class GpHyperparams:
    signal: float = 6.0        # sigma_f
    length_scale: float = 100.0
    noise: float = 1.0         # sigma_s, observation noise std
    prior_mean: float = 30.0

    def __post_init__(self):
        if self.signal <= 0 or self.length_scale <= 0 or self.noise < 0:
            raise MapError("hyperparameters must be positive (noise may be 0)")


def se_kernel(a: np.ndarray, b: np.ndarray, hyper: GpHyperparams) -> np.ndarray:
    """Squared-exponential Gram matrix between position arrays a (n,2), b (m,2)."""
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return hyper.signal ** 2 * np.exp(-0.5 * d2 / hyper.length_scale ** 2)


class EnergyMap:
    """Posterior unit-energy field. Build with fit_gp; query free cells only."""

    def __init__(self, grid: GridSpec, hyper: GpHyperparams, obstacles: np.ndarray,
                 sample_positions: np.ndarray, sample_values: np.ndarray):
        self.grid = grid
        self.hyper = hyper
        self.obstacles = obstacles.astype(bool)
        if self.obstacles.shape != (grid.height, grid.width):
            raise MapError("obstacle mask shape must be (height, width)")
        self.sample_positions = np.asarray(sample_positions, dtype=float).reshape(-1, 2)
        self.sample_values = np.asarray(sample_values, dtype=float).reshape(-1)
        if self.sample_positions.shape[0] != self.sample_values.shape[0]:
            raise MapError("sample positions/values length mismatch")
        self._chol = None
        self._alpha = None
        if len(self.sample_values) > 0:
            gram = se_kernel(self.sample_positions, self.sample_positions, hyper)
            gram[np.diag_indices_from(gram)] += hyper.noise ** 2
            try:
                self._chol = cho_factor(gram, lower=True)
            except LinAlgError as exc:
                raise SingularKernelError(
                    "sample kernel matrix is singular (duplicate noiseless samples?)") from exc
            self._alpha = cho_solve(self._chol, self.sample_values - hyper.prior_mean)
        # posterior mean cached over the full grid (cheap: n_cells x n_samples)
        centers = self._all_centers()
        self._mean_flat = self._posterior_mean_at(centers)

    # -- geometry -------------------------------------------------------
    def _all_centers(self) -> np.ndarray:
        xs = self.grid.origin[0] + (np.arange(self.grid.width) + 0.5) * self.grid.cell_size
        ys = self.grid.origin[1] + (np.arange(self.grid.height) + 0.5) * self.grid.cell_size
        gx, gy = np.meshgrid(xs, ys)  # row-major: index = iy * width + ix
        return np.column_stack([gx.ravel(), gy.ravel()])

    def _flat(self, cell: tuple[int, int]) -> int:
        return cell[1] * self.grid.width + cell[0]

    def is_free(self, cell: tuple[int, int]) -> bool:
        return self.grid.in_bounds(cell) and not self.obstacles[cell[1], cell[0]]

    def _require_free(self, cells) -> None:
        for c in cells:
            if not self.is_free(c):
                raise MapError(f"cell {c!r} is an obstacle or out of bounds; no cost queries")

    # -- posterior ------------------------------------------------------
    def _posterior_mean_at(self, positions: np.ndarray) -> np.ndarray:
        prior = np.full(positions.shape[0], self.hyper.prior_mean)
        if self._alpha is None:
            return prior
        cross = se_kernel(positions, self.sample_positions, self.hyper)
        return prior + cross @ self._alpha

    def mean_at(self, cells) -> np.ndarray:
        self._require_free(cells)
        return np.array([self._mean_flat[self._flat(c)] for c in cells])

    def covariance(self, cells) -> np.ndarray:
        """Posterior covariance submatrix over the given free cells."""
        self._require_free(cells)
        pos = np.array([self.grid.center(c) for c in cells], dtype=float).reshape(-1, 2)
        prior = se_kernel(pos, pos, self.hyper)
        if self._chol is None:
            return prior
        cross = se_kernel(pos, self.sample_positions, self.hyper)
        return prior - cross @ cho_solve(self._chol, cross.T)

    def variance_at(self, cells) -> np.ndarray:
        self._require_free(cells)
        pos = np.array([self.grid.center(c) for c in cells], dtype=float).reshape(-1, 2)
        prior = np.full(pos.shape[0], self.hyper.signal ** 2)
        if self._chol is None:
            return prior
        cross = se_kernel(pos, self.sample_positions, self.hyper)
        reduction = np.einsum("ij,ji->i", cross, cho_solve(self._chol, cross.T))
        return prior - reduction

    def free_cells(self) -> list[tuple[int, int]]:
        return [(ix, iy) for iy in range(self.grid.height) for ix in range(self.grid.width)
                if not self.obstacles[iy, ix]]

    def min_free_mean(self) -> float:
        """Smallest clamped posterior mean over free cells (A* heuristic rate)."""
        mask = ~self.obstacles.ravel()
        if not mask.any():
            raise MapError("map has no free cells")
        return max(0.0, float(self._mean_flat[mask].min()))


def fit_gp(
    samples: list[tuple[tuple[float, float], float]],
    grid: GridSpec,
    hyper: GpHyperparams = GpHyperparams(),
    obstacles: np.ndarray | None = None,
) -> EnergyMap:
    """Condition the field on (position, observed unit cost) samples.

    With zero samples the prior is returned (constant mean, signal^2
    variance). With zero noise the posterior interpolates the observations.
    """
    if obstacles is None:
        obstacles = np.zeros((grid.height, grid.width), dtype=bool)
    positions = np.array([p for p, _ in samples], dtype=float).reshape(-1, 2)
    values = np.array([v for _, v in samples], dtype=float)
    for p in positions:
        cell = grid.cell_of(p)
        if obstacles[cell[1], cell[0]]:
            raise MapError(f"sample at {tuple(p)!r} falls on an obstacle cell")
    return EnergyMap(grid, hyper, obstacles, positions, values)


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------

@dataclass
class PathCost:
    cells: list[tuple[int, int]]
    segment_lengths: list[float]
    distribution: GaussianScalar

    @property
    def length(self) -> float:
        return float(sum(self.segment_lengths))


_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _neighbors(emap: EnergyMap, cell: tuple[int, int]):
    size = emap.grid.cell_size
    for dx, dy in _NEIGHBORS:
        nxt = (cell[0] + dx, cell[1] + dy)
        if emap.is_free(nxt):
            yield nxt, (SQRT2 * size if dx and dy else size)


def _search(emap: EnergyMap, start, goal, heuristic_rate: float):
    """Uniform machinery for A* (rate > 0) and Dijkstra (rate = 0)."""
    if not emap.is_free(start) or not emap.is_free(goal):
        raise MapError("path endpoints must be free cells")
    mean = emap._mean_flat
    flat = emap._flat
    gx, gy = emap.grid.center(goal)

    def h(cell):
        if heuristic_rate == 0.0:
            return 0.0
        cx, cy = emap.grid.center(cell)
        return heuristic_rate * math.hypot(cx - gx, cy - gy)

    dist = {start: 0.0}
    parent = {}
    tie = 0
    heap = [(h(start), tie, start)]
    done = set()
    while heap:
        _, _, cell = heapq.heappop(heap)
        if cell in done:
            continue
        done.add(cell)
        if cell == goal:
            path = [cell]
            while path[-1] in parent:
                path.append(parent[path[-1]])
            return list(reversed(path)), dist[goal]
        rate = max(0.0, mean[flat(cell)])
        for nxt, step in _neighbors(emap, cell):
            cand = dist[cell] + rate * step
            if cand < dist.get(nxt, math.inf) - 1e-15:
                dist[nxt] = cand
                parent[nxt] = cell
                tie += 1
                heapq.heappush(heap, (cand + h(nxt), tie, nxt))
    raise NoPathError(f"no path from {start} to {goal}")


def astar_path(emap: EnergyMap, start: tuple[int, int], goal: tuple[int, int]) -> PathCost:
    """Minimum expected-energy path; admissible heuristic = cheapest free
    cell rate times Euclidean distance, so the cost equals Dijkstra's."""
    cells, _ = _search(emap, start, goal, emap.min_free_mean())
    return _bundle(emap, cells)


def dijkstra_path(emap: EnergyMap, start, goal) -> PathCost:
    """Exact oracle for astar_path (no heuristic)."""
    cells, _ = _search(emap, start, goal, 0.0)
    return _bundle(emap, cells)


def _bundle(emap: EnergyMap, cells) -> PathCost:
    size = emap.grid.cell_size
    lengths = [SQRT2 * size if (a[0] != b[0] and a[1] != b[1]) else size
               for a, b in zip(cells, cells[1:])]
    return PathCost(cells, lengths, path_distribution(emap, cells))


def path_distribution(emap: EnergyMap, cells: list[tuple[int, int]]) -> GaussianScalar:
    """Gaussian total cost of a cell path.

    The cost of each segment accrues at the departing cell's unit rate, so
    the mean/covariance cover the first n-1 cells; a single-cell path costs
    exactly (0, 0).
    """
    if len(cells) <= 1:
        emap._require_free(cells)
        return GaussianScalar(0.0, 0.0)
    for a, b in zip(cells, cells[1:]):
        if max(abs(a[0] - b[0]), abs(a[1] - b[1])) != 1:
            raise MapError(f"path cells {a} -> {b} are not 8-connected neighbors")
    size = emap.grid.cell_size
    d = np.array([SQRT2 * size if (a[0] != b[0] and a[1] != b[1]) else size
                  for a, b in zip(cells, cells[1:])])
    head = cells[:-1]
    m = emap.mean_at(head)
    cov = emap.covariance(head)
    mean = float(d @ m)
    var = float(d @ cov @ d)
    return GaussianScalar(mean, max(0.0, var))


# ---------------------------------------------------------------------------
# edge-cost export
# ---------------------------------------------------------------------------

def build_edge_costs(
    emap: EnergyMap,
    node_locations: dict[int, tuple[float, float]],
    vehicle_weights: dict[int, float],
    pairs: list[tuple[int, int]],
) -> tuple[dict[tuple[int, int, int], GaussianScalar], dict[tuple[int, int], PathCost], list[str]]:
    """Weight-scaled Gaussian edge costs for every vehicle and node pair.

    Paths are computed once per directed location pair on the base map
    (uniform scaling cannot change the argmin path) and reused across
    vehicles: mean scales by weight, variance by weight^2. Negative path
    means (possible when the posterior dips below zero) are floored at 0
    and reported in the notes. Same-cell pairs get a (0, 0) cost.
    """
    notes: list[str] = []
    path_cache: dict[tuple, PathCost] = {}
    table: dict[tuple[int, int, int], GaussianScalar] = {}
    paths: dict[tuple[int, int], PathCost] = {}
    for (i, j) in pairs:
        ci = emap.grid.cell_of(node_locations[i])
        cj = emap.grid.cell_of(node_locations[j])
        key = (ci, cj)
        if key not in path_cache:
            if ci == cj:
                path_cache[key] = PathCost([ci], [], GaussianScalar(0.0, 0.0))
            else:
                try:
                    path_cache[key] = astar_path(emap, ci, cj)
                except NoPathError as exc:
                    raise NoPathError(f"nodes {i} -> {j}: {exc}") from exc
        pc = path_cache[key]
        paths[(i, j)] = pc
        base = pc.distribution
        if base.mean < 0:
            notes.append(f"pair ({i},{j}): negative path mean {base.mean:.4f} floored to 0")
            base = GaussianScalar(0.0, base.variance)
        for k, w in vehicle_weights.items():
            table[(k, i, j)] = base.scaled(w)
    return table, paths, notes


# ---------------------------------------------------------------------------
# map file format
# ---------------------------------------------------------------------------

MAP_FORMAT = "energy-map"
MAP_VERSION = 1


def map_to_json(emap: EnergyMap) -> str:
    doc = {
        "format": MAP_FORMAT,
        "version": MAP_VERSION,
        "grid": {"width": emap.grid.width, "height": emap.grid.height,
                 "cell_size": emap.grid.cell_size, "origin": list(emap.grid.origin)},
        "hyperparams": {"signal": emap.hyper.signal, "length_scale": emap.hyper.length_scale,
                        "noise": emap.hyper.noise, "prior_mean": emap.hyper.prior_mean},
        "obstacles": [[int(ix), int(iy)] for iy, ix in zip(*np.nonzero(emap.obstacles))],
        "samples": [[float(p[0]), float(p[1]), float(v)]
                    for p, v in zip(emap.sample_positions, emap.sample_values)],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def map_from_json(text: str) -> EnergyMap:
    doc = json.loads(text)
    if doc.get("format") != MAP_FORMAT or doc.get("version") != MAP_VERSION:
        raise MapError("unknown map format/version")
    g = doc["grid"]
    grid = GridSpec(g["width"], g["height"], g["cell_size"], tuple(g["origin"]))
    h = doc["hyperparams"]
    hyper = GpHyperparams(h["signal"], h["length_scale"], h["noise"], h["prior_mean"])
    obstacles = np.zeros((grid.height, grid.width), dtype=bool)
    for ix, iy in doc["obstacles"]:
        obstacles[iy, ix] = True
    samples = [((x, y), v) for x, y, v in doc["samples"]]
    return fit_gp(samples, grid, hyper, obstacles)
