"""Archive containers: a nearest-center grid and a distance-threshold archive."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import ConfigurationError
from .vqvae import nearest_code

INSERTED = "inserted"
REPLACED = "replaced"
REJECTED = "rejected"
ADDED = "added"


@dataclass
class Individual:
    genome: np.ndarray
    fitness: float
    raw_bd: np.ndarray
    latent_bd: np.ndarray | None = None
    ground_truth_bd: np.ndarray | None = None
    cell: int | None = None
    generation: int = -1  # model generation that produced latent_bd

    def __post_init__(self):
        if not np.isfinite(self.fitness):
            raise ValueError(f"non-finite fitness {self.fitness!r}")
        self.fitness = float(self.fitness)


# ----------------------------------------------------------------------- grid


class GridContainer:
    """K slots, one per center; an individual lives in the slot of its nearest center."""

    def __init__(self, centers: np.ndarray):
        self.centers = np.array(centers, dtype=np.float64, ndmin=2)
        self.slots: list[Individual | None] = [None] * len(self.centers)

    def __len__(self) -> int:
        return sum(s is not None for s in self.slots)

    @property
    def capacity(self) -> int:
        return len(self.centers)

    def members(self) -> list[Individual]:
        return [s for s in self.slots if s is not None]

    def occupied(self) -> list[int]:
        return [i for i, s in enumerate(self.slots) if s is not None]

    def cell_of(self, bd: np.ndarray) -> int:
        return int(nearest_code(self.centers, np.atleast_2d(bd))[0])

    def insert(self, ind: Individual, cooperation: bool = False, cell: int | None = None) -> str:
        bd = np.asarray(ind.latent_bd, dtype=np.float64)
        if bd.shape[-1] != self.centers.shape[1]:
            raise ValueError(f"descriptor dim {bd.shape[-1]} != grid dim {self.centers.shape[1]}")
        if cell is None:
            cell = self.cell_of(bd)
        ind.cell = cell
        incumbent = self.slots[cell]
        if incumbent is None:
            self.slots[cell] = ind
            return INSERTED
        if cooperation or ind.fitness > incumbent.fitness:
            self.slots[cell] = ind
            return REPLACED
        return REJECTED

    def set_centers(self, centers: np.ndarray) -> list[Individual]:
        """Install new centers and drop every occupant; returns the old occupants
        in ascending order of their previous cell."""
        old = self.members()
        self.centers = np.array(centers, dtype=np.float64, ndmin=2)
        self.slots = [None] * len(self.centers)
        return old


def grid_insert(container: GridContainer, ind: Individual, cooperation: bool = False) -> str:
    return container.insert(ind, cooperation)


@dataclass
class HardcodedGridSpec:
    """Either a regular grid (``bounds`` + ``bins``) or an explicit centroid list."""

    bounds: Sequence[tuple[float, float]] | None = None
    bins: Sequence[int] | None = None
    centroids: np.ndarray | None = None
    max_cells: int = 1_000_000

    def validate(self) -> None:
        if self.centroids is not None:
            if len(self.centroids) == 0:
                raise ConfigurationError("centroid list is empty")
            return
        if self.bounds is None or self.bins is None or len(self.bounds) != len(self.bins):
            raise ConfigurationError("grid spec needs matching bounds and bins")
        for (lo, hi), b in zip(self.bounds, self.bins):
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise ConfigurationError(f"bad bounds ({lo}, {hi})")
            if int(b) < 1:
                raise ConfigurationError(f"bins must be >= 1, got {b}")

    def centers(self) -> np.ndarray:
        self.validate()
        if self.centroids is not None:
            c = np.array(self.centroids, dtype=np.float64, ndmin=2)
        else:
            n = int(np.prod([int(b) for b in self.bins]))
            if n > self.max_cells:
                raise ConfigurationError(f"grid has {n} cells, more than the allowed {self.max_cells}")
            axes = [
                lo + (np.arange(int(b)) + 0.5) * (hi - lo) / int(b)
                for (lo, hi), b in zip(self.bounds, self.bins)
            ]
            c = np.array(list(itertools.product(*axes)), dtype=np.float64)
        if len(c) > self.max_cells:
            raise ConfigurationError(f"grid has {len(c)} cells, more than the allowed {self.max_cells}")
        return c


def hardcoded_grid(spec: HardcodedGridSpec) -> GridContainer:
    return GridContainer(spec.centers())


# --------------------------------------------------------------- unstructured


class UnstructuredArchive:
    """Distance-threshold archive with container-size control.

    A newcomer farther than ``d_current`` from every member is added; otherwise
    it competes with its nearest member only. When the hard cap is exceeded
    the member with the smallest nearest-neighbour distance is evicted.
    """

    def __init__(
        self,
        dim: int,
        target_size: int,
        max_size: int,
        d_init: float = 1e-5,
        d_min: float = 1e-5,
        d_max: float = 1.0,
        k_csc: float = 5e-4,
    ):
        if target_size <= 0:
            raise ConfigurationError("target_size must be positive")
        if max_size < 1:
            raise ConfigurationError("max_size must be positive")
        if not d_min <= d_max:
            raise ConfigurationError("d_min must not exceed d_max")
        self.dim = dim
        self.target_size = target_size
        self.max_size = max_size
        self.d_min, self.d_max, self.k_csc = d_min, d_max, k_csc
        self.d_current = float(np.clip(d_init, d_min, d_max))
        self.clear()

    def clear(self) -> None:
        self.items: list[Individual] = []
        self._bd = np.empty((0, self.dim))
        self._nn_dist = np.empty(0)
        self._nn_idx = np.empty(0, dtype=np.int64)
        self.log: list[tuple[str, float]] = []

    def __len__(self) -> int:
        return len(self.items)

    def members(self) -> list[Individual]:
        return list(self.items)

    @property
    def capacity(self) -> int:
        return self.max_size

    def _distances(self, bd: np.ndarray) -> np.ndarray:
        diff = self._bd - bd
        return np.sqrt((diff * diff).sum(1))

    def _refresh_nn(self, i: int) -> None:
        d = self._distances(self._bd[i])
        d[i] = np.inf
        j = int(np.argmin(d)) if len(d) > 1 else -1
        self._nn_idx[i] = j
        self._nn_dist[i] = d[j] if j >= 0 else np.inf

    def insert(self, ind: Individual, cooperation: bool = False) -> str:
        bd = np.asarray(ind.latent_bd, dtype=np.float64).reshape(-1)
        if bd.size != self.dim:
            raise ValueError(f"descriptor dim {bd.size} != archive dim {self.dim}")
        if not self.items:
            self._append(ind, bd, np.empty(0))
            return ADDED
        d = self._distances(bd)
        nearest = int(np.argmin(d))
        if d[nearest] > self.d_current:
            self._append(ind, bd, d)
            if len(self.items) > self.max_size:
                self._evict_most_redundant()
            return ADDED
        if cooperation or ind.fitness > self.items[nearest].fitness:
            self._replace(nearest, ind, bd)
            return REPLACED
        return REJECTED

    def _append(self, ind: Individual, bd: np.ndarray, d: np.ndarray) -> None:
        n = len(self.items)
        self.items.append(ind)
        self._bd = np.vstack([self._bd, bd[None, :]])
        if n:
            closer = d < self._nn_dist
            self._nn_dist = np.where(closer, d, self._nn_dist)
            self._nn_idx = np.where(closer, n, self._nn_idx)
            j = int(np.argmin(d))
            self._nn_dist = np.append(self._nn_dist, d[j])
            self._nn_idx = np.append(self._nn_idx, j)
        else:
            self._nn_dist = np.array([np.inf])
            self._nn_idx = np.array([-1], dtype=np.int64)
        self.log.append((ADDED, self.d_current))

    def _replace(self, i: int, ind: Individual, bd: np.ndarray) -> None:
        self.items[i] = ind
        self._bd[i] = bd
        stale = np.flatnonzero(self._nn_idx == i).tolist()
        d = self._distances(bd)
        d[i] = np.inf
        closer = d < self._nn_dist
        self._nn_dist = np.where(closer, d, self._nn_dist)
        self._nn_idx = np.where(closer, i, self._nn_idx)
        for j in set(stale + [i]):
            self._refresh_nn(j)
        self.log.append((REPLACED, self.d_current))

    def _evict_most_redundant(self) -> None:
        victim = int(np.argmin(self._nn_dist))
        self.items.pop(victim)
        self._bd = np.delete(self._bd, victim, axis=0)
        self._nn_dist = np.delete(self._nn_dist, victim)
        idx = np.delete(self._nn_idx, victim)
        stale = np.flatnonzero(idx == victim)
        idx[idx > victim] -= 1
        self._nn_idx = idx
        for j in stale:
            self._refresh_nn(int(j))
        self.log.append(("evicted", self.d_current))

    def descriptors(self) -> np.ndarray:
        return self._bd.copy()

    def csc_adapt(self) -> float:
        err = (len(self.items) - self.target_size) / self.target_size
        self.d_current = float(np.clip(self.d_current * (1.0 + self.k_csc * err), self.d_min, self.d_max))
        return self.d_current


def unstructured_insert(archive: UnstructuredArchive, ind: Individual, cooperation: bool = False) -> str:
    return archive.insert(ind, cooperation)


def csc_adapt(archive: UnstructuredArchive) -> float:
    return archive.csc_adapt()


