"""Ground-truth projections of archives: coverage, projected QD score, EDR, CDS."""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import ConfigurationError
from .containers import Individual
from .vqvae import lloyd_kmeans, nearest_code

UNIFORM = "uniform-grid"
CENTROIDS = "centroid-list"


@dataclass
class GroundTruthGrid:
    kind: str
    bounds: list[tuple[float, float]] | None = None
    bins: list[int] | None = None
    centroids: np.ndarray | None = None

    @property
    def n_cells(self) -> int:
        if self.kind == UNIFORM:
            return int(np.prod(self.bins))
        return len(self.centroids)

    def cells(self, bds: np.ndarray) -> np.ndarray:
        """Cell index of each ground-truth descriptor row."""
        bds = np.atleast_2d(np.asarray(bds, dtype=np.float64))
        if len(bds) == 0:
            return np.zeros(0, dtype=np.int64)
        if self.kind == CENTROIDS:
            return nearest_code(self.centroids, bds)
        idx = np.zeros(len(bds), dtype=np.int64)
        for axis, ((lo, hi), b) in enumerate(zip(self.bounds, self.bins)):
            k = np.floor((bds[:, axis] - lo) / (hi - lo) * b).astype(np.int64)
            idx = idx * b + np.clip(k, 0, b - 1)
        return idx


@dataclass
class MetricsRecord:
    iteration: int
    coverage: float
    pqd: float
    edr: float
    cds: float
    archive_size: int
    valid_size: int
    edr_undefined: bool = False

    CSV_FIELDS = ("iteration", "coverage", "pqd", "edr", "cds", "archive_size", "valid_size")

    def row(self) -> list[str]:
        return [
            str(self.iteration), repr(float(self.coverage)), repr(float(self.pqd)),
            repr(float(self.edr)), repr(float(self.cds)), str(self.archive_size), str(self.valid_size),
        ]


# ------------------------------------------------------------- ground truth


@functools.lru_cache(maxsize=8)
def _arm_centroids(limits: tuple, goal: tuple, link_length: float, epsilon: float,
                   n_target: int, budget: int, k: int, seed: int) -> np.ndarray:
    from .environments.arm import ArmChain, sample_goal_configurations

    chain = ArmChain(limits=np.array(limits), goal=goal, link_length=link_length)
    rng = np.random.default_rng(seed)
    samples = sample_goal_configurations(chain, epsilon, n_target, budget, rng)
    if len(samples) < k:
        raise ConfigurationError(
            f"only {len(samples)} goal-reaching configurations accepted (< {k} centroids); "
            f"increase the tolerance epsilon or the sample budget"
        )
    centers = lloyd_kmeans(samples, k, rng)
    centers.setflags(write=False)
    return centers


def arm_ground_truth(chain, epsilon: float = 0.05, n_target: int = 100_000, budget: int = 10_000_000,
                     k: int = 400, seed: int = 0) -> GroundTruthGrid:
    limits = tuple(map(tuple, np.asarray(chain.limits).tolist()))
    centers = _arm_centroids(limits, tuple(chain.goal), chain.link_length, epsilon, n_target, budget, k, seed)
    return GroundTruthGrid(CENTROIDS, bounds=[tuple(l) for l in limits], centroids=np.array(centers))


def build_ground_truth(env, bins: Sequence[int] | None = None, **arm_options) -> GroundTruthGrid:
    """Ground-truth grid for an environment instance."""
    from .environments.arm import ArmChain
    from .environments.gridworld import GridWorld
    from .environments.mobile import MobileWorld

    if isinstance(env, MobileWorld):
        b = list(bins) if bins else [30, 30]
        return GroundTruthGrid(UNIFORM, bounds=env.ground_truth_bounds(), bins=b)
    if isinstance(env, GridWorld):
        tiles = env.grid.traversable().astype(np.float64)
        return GroundTruthGrid(CENTROIDS, bounds=env.ground_truth_bounds(), centroids=tiles)
    if isinstance(env, ArmChain):
        return arm_ground_truth(env, **arm_options)
    raise ConfigurationError(f"no ground truth for environment {type(env).__name__}")


# ------------------------------------------------------------------ metrics


def _gt(archive_or_members) -> tuple[np.ndarray, np.ndarray]:
    members = archive_or_members if isinstance(archive_or_members, list) else archive_or_members.members()
    if not members:
        return np.empty((0, 0)), np.empty(0)
    bds = np.array([m.ground_truth_bd for m in members], dtype=np.float64)
    fit = np.array([m.fitness for m in members], dtype=np.float64)
    return bds, fit


def occupied_cells(archive, grid: GroundTruthGrid) -> np.ndarray:
    bds, _ = _gt(archive)
    return np.unique(grid.cells(bds)) if len(bds) else np.zeros(0, dtype=np.int64)


def coverage(archive, grid: GroundTruthGrid) -> float:
    return len(occupied_cells(archive, grid)) / grid.n_cells


def projected_archive(archive, grid: GroundTruthGrid) -> dict[int, float]:
    """Best fitness per ground-truth cell."""
    bds, fit = _gt(archive)
    best: dict[int, float] = {}
    if len(bds) == 0:
        return best
    for c, f in zip(grid.cells(bds).tolist(), fit.tolist()):
        if c not in best or f > best[c]:
            best[c] = f
    return best


def pqd_score(archive, grid: GroundTruthGrid) -> float:
    return float(sum(projected_archive(archive, grid).values()))


def edr(archive, grid: GroundTruthGrid) -> tuple[float, bool]:
    """Occupied bins over valid archive size; (0.0, True) for an empty archive."""
    valid = len(archive.members()) if not isinstance(archive, list) else len(archive)
    if valid == 0:
        return 0.0, True
    return len(occupied_cells(archive, grid)) / valid, False


def cds(coverage_value: float, edr_value: float) -> float:
    return coverage_value * edr_value


def compute_record(iteration: int, archive, grid: GroundTruthGrid) -> MetricsRecord:
    members = archive.members()
    cov = coverage(members, grid)
    e, undefined = edr(members, grid)
    return MetricsRecord(
        iteration=iteration,
        coverage=cov,
        pqd=pqd_score(members, grid),
        edr=e,
        cds=cds(cov, e),
        archive_size=archive.capacity,
        valid_size=len(members),
        edr_undefined=undefined,
    )


def elite_grid_projection(
    members: list[Individual], bounds: Sequence[tuple[float, float]], bins: Sequence[int] = (8, 8),
    dims: tuple[int, int] = (0, 1),
) -> np.ndarray:
    """Normalized elite fitness on a 2-D grid over the ground-truth descriptor.

    Empty cells are NaN. Occupied cells are min-max normalized; if every
    occupied cell holds the same fitness they are all 1.
    """
    nx, ny = int(bins[0]), int(bins[1])
    out = np.full((nx, ny), np.nan)
    if not members:
        return out
    grid = GroundTruthGrid(UNIFORM, bounds=[bounds[dims[0]], bounds[dims[1]]], bins=[nx, ny])
    bds = np.array([m.ground_truth_bd for m in members], dtype=np.float64)[:, list(dims)]
    for c, f in zip(grid.cells(bds).tolist(), [m.fitness for m in members]):
        i, j = divmod(c, ny)
        if np.isnan(out[i, j]) or f > out[i, j]:
            out[i, j] = f
    occ = ~np.isnan(out)
    lo, hi = out[occ].min(), out[occ].max()
    out[occ] = 1.0 if hi == lo else (out[occ] - lo) / (hi - lo)
    return out
