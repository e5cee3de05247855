"""Differential-drive robot in a square arena, optionally with an L-shaped obstacle.

Fitness rewards reaching the final position early: the sum over all steps of
``exp(-|p_i - p_N|)``. The raw behavior record is an area-pooled raster of the
robot footprint at its final position.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import ConfigurationError
from .base import EvalBatch, EvalOutcome
from .policy import PolicySpec

# walls are axis-aligned rectangles (x0, y0, x1, y1) in world units
WALL_PRESETS: dict[str, list[tuple[float, float, float, float]]] = {
    "free": [],
    "l_shape": [(200.0, 200.0, 600.0, 600.0)],
}
START_PRESETS: dict[str, tuple[float, float, float]] = {
    "free": (300.0, 300.0, 0.0),
    "l_shape": (100.0, 100.0, 0.0),
}

MOBILE_POLICY = PolicySpec((4, 16, 2), "relu", "tanh")


@dataclass
class MobileWorld:
    extent: float = 600.0
    walls: list[tuple[float, float, float, float]] = field(default_factory=list)
    start: tuple[float, float, float] = (300.0, 300.0, 0.0)
    dt: float = 0.1
    wheel_base: float = 20.0
    v_max: float = 50.0
    robot_radius: float = 10.0
    steps: int = 400
    raster: int = 16
    normalize_distances: bool = True
    policy: PolicySpec = MOBILE_POLICY

    @classmethod
    def preset(cls, name: str, **overrides) -> "MobileWorld":
        if name not in WALL_PRESETS:
            raise ConfigurationError(f"unknown mobile wall preset {name!r}; choose from {sorted(WALL_PRESETS)}")
        kw = {"walls": list(WALL_PRESETS[name]), "start": START_PRESETS[name], **overrides}
        return cls(**kw)

    def __post_init__(self):
        if self.raster < 1 or self.raster > int(self.extent):
            raise ConfigurationError(f"raster resolution {self.raster} out of range")
        if not self.is_free(np.array([self.start[0]]), np.array([self.start[1]]))[0]:
            raise ConfigurationError(f"start pose {self.start} collides with a wall")
        self._pool = pooling_matrix(int(round(self.extent)), self.raster)
        self._substeps = max(1, math.ceil(self.v_max * self.dt / self.robot_radius))

    @property
    def n_params(self) -> int:
        return self.policy.n_params

    @property
    def raw_dim(self) -> int:
        return self.raster * self.raster

    # -- geometry
    def is_free(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """True where a robot centred at (x, y) touches neither the border nor a wall."""
        r = self.robot_radius
        ok = (x >= r) & (x <= self.extent - r) & (y >= r) & (y <= self.extent - r)
        for x0, y0, x1, y1 in self.walls:
            inside = (x > x0 - r) & (x < x1 + r) & (y > y0 - r) & (y < y1 + r)
            ok &= ~inside
        return ok

    def inside_wall(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        hit = np.zeros(np.shape(x), dtype=bool)
        for x0, y0, x1, y1 in self.walls:
            hit |= (x > x0) & (x < x1) & (y > y0) & (y < y1)
        return hit

    def _move(self, x, y, dx, dy):
        nx = x + dx
        x = np.where(self.is_free(nx, y), nx, x)
        ny = y + dy
        y = np.where(self.is_free(x, ny), ny, y)
        return x, y

    # -- rollout
    def rollout(self, genomes: np.ndarray) -> np.ndarray:
        """Positions after every step, shape (steps, P, 2)."""
        layers = self.policy.unpack(genomes)
        p = len(layers[0][0])
        x = np.full(p, self.start[0])
        y = np.full(p, self.start[1])
        th = np.full(p, self.start[2])
        traj = np.empty((self.steps, p, 2))
        half = self.v_max / 2.0
        for i in range(self.steps):
            state = np.stack(
                [2.0 * x / self.extent - 1.0, 2.0 * y / self.extent - 1.0, np.cos(th), np.sin(th)], axis=1
            )
            wheels = self.policy.forward(layers, state)
            v_l, v_r = wheels[:, 0], wheels[:, 1]
            v = (v_l + v_r) * half
            omega = (v_r - v_l) * self.v_max / self.wheel_base
            dx = v * np.cos(th) * self.dt / self._substeps
            dy = v * np.sin(th) * self.dt / self._substeps
            for _ in range(self._substeps):
                x, y = self._move(x, y, dx, dy)
            th = th + omega * self.dt
            traj[i, :, 0] = x
            traj[i, :, 1] = y
        return traj

    def fitness_from_trajectory(self, traj: np.ndarray) -> np.ndarray:
        scale = self.extent if self.normalize_distances else 1.0
        d = np.sqrt(((traj - traj[-1]) ** 2).sum(-1)) / scale
        return np.exp(-d).sum(0)

    def raster_bd(self, pos: np.ndarray) -> np.ndarray:
        """Pooled footprint rasters for final positions ``pos`` (P, 2) -> (P, raster**2)."""
        pos = np.atleast_2d(pos)
        r = self.robot_radius
        size = int(round(self.extent))
        span = 2 * int(math.ceil(r)) + 2
        offs = np.arange(span)
        x0 = np.clip(np.floor(pos[:, 0] - r).astype(np.int64), 0, size - span)
        y0 = np.clip(np.floor(pos[:, 1] - r).astype(np.int64), 0, size - span)
        cols = x0[:, None] + offs  # (P, span)
        rows = y0[:, None] + offs
        dxc = cols + 0.5 - pos[:, 0:1]
        dyc = rows + 0.5 - pos[:, 1:2]
        mask = (dyc[:, :, None] ** 2 + dxc[:, None, :] ** 2) <= r * r  # (P, rows, cols)
        wy = self._pool[rows]  # (P, span, raster)
        wx = self._pool[cols]
        out = np.matmul(np.matmul(wy.transpose(0, 2, 1), mask.astype(np.float64)), wx)
        return out.reshape(len(pos), -1)

    def full_image(self, pos: np.ndarray) -> np.ndarray:
        """Binary footprint image at native resolution (row = y, column = x)."""
        size = int(round(self.extent))
        c = np.arange(size) + 0.5
        return ((c[:, None] - pos[1]) ** 2 + (c[None, :] - pos[0]) ** 2) <= self.robot_radius**2

    def pool_image(self, img: np.ndarray) -> np.ndarray:
        return self._pool.T @ img.astype(np.float64) @ self._pool

    def evaluate(self, genomes: np.ndarray) -> EvalBatch:
        traj = self.rollout(genomes)
        final = traj[-1].copy()
        return EvalBatch(self.fitness_from_trajectory(traj), self.raster_bd(final), final)

    def ground_truth_bounds(self) -> list[tuple[float, float]]:
        return [(0.0, self.extent), (0.0, self.extent)]


def pooling_matrix(size: int, out: int) -> np.ndarray:
    """(size, out) weights: overlap of pixel p with output bin j, divided by the bin width."""
    s = size / out
    p = np.arange(size)[:, None]
    j = np.arange(out)[None, :]
    overlap = np.minimum(p + 1, (j + 1) * s) - np.maximum(p, j * s)
    return np.clip(overlap, 0.0, None) / s


def eval_mobile(world: MobileWorld, genome: np.ndarray) -> EvalOutcome:
    return world.evaluate(np.atleast_2d(genome))[0]


def raster_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise intersection-over-union of occupied (non-zero) pixels, (n, m)."""
    oa = (np.atleast_2d(a) > 0).astype(np.float64)
    ob = (np.atleast_2d(b) > 0).astype(np.float64)
    inter = oa @ ob.T
    union = oa.sum(1)[:, None] + ob.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, 1.0)
    return iou


def filter_duplicates(rasters: np.ndarray, overlap_threshold: float = 0.9) -> np.ndarray:
    """Greedy in-order filtering; returns indices of the retained rasters.

    A raster is dropped when its IoU with any already retained raster exceeds
    ``overlap_threshold``.
    """
    rasters = np.atleast_2d(rasters)
    kept: list[int] = []
    for i in range(len(rasters)):
        if kept and raster_iou(rasters[i], rasters[kept]).max() > overlap_threshold:
            continue
        kept.append(i)
    return np.array(kept, dtype=np.int64)
