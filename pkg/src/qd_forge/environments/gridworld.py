"""Key-and-door gridworld with a limited field of view.

Map files use one character per tile: ``#`` wall, ``.`` floor, ``a``-``c``
keys, ``A``-``C`` the matching doors and ``@`` the agent start. Picking up a
key scores 10 once; opening its door scores 20 once. Keys are not consumed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..autodiff import ConfigurationError
from .base import EvalBatch, EvalOutcome
from .policy import PolicySpec

FLOOR, WALL, KEY, DOOR = 0, 1, 2, 3
KEY_IDS = "abc"
DOOR_IDS = "ABC"
N_KEYS = len(KEY_IDS)
# up, right, down, left, stay as (d_row, d_col)
MOVES = np.array([(-1, 0), (0, 1), (1, 0), (0, -1), (0, 0)], dtype=np.int64)
KEY_REWARD = 10.0
DOOR_REWARD = 20.0


def load_map_text(text: str) -> "GridMap":
    lines = [ln.rstrip("\r") for ln in text.strip("\n").split("\n")]
    if not lines or any(len(ln) != len(lines[0]) for ln in lines):
        raise ConfigurationError("map must be a non-empty rectangle of characters")
    h, w = len(lines), len(lines[0])
    tiles = np.zeros((h, w), dtype=np.int64)
    item = np.full((h, w), -1, dtype=np.int64)
    start = None
    for r, ln in enumerate(lines):
        for c, ch in enumerate(ln):
            if ch == "#":
                tiles[r, c] = WALL
            elif ch == ".":
                pass
            elif ch == "@":
                if start is not None:
                    raise ConfigurationError(f"second start tile at line {r + 1}, column {c + 1}")
                start = (r, c)
            elif ch in KEY_IDS:
                tiles[r, c] = KEY
                item[r, c] = KEY_IDS.index(ch)
            elif ch in DOOR_IDS:
                tiles[r, c] = DOOR
                item[r, c] = DOOR_IDS.index(ch)
            else:
                raise ConfigurationError(f"unknown map character {ch!r} at line {r + 1}, column {c + 1}")
    if start is None:
        raise ConfigurationError("map has no start tile '@'")
    return GridMap(tiles, item, start)


def load_map(path: str | Path | None = None) -> "GridMap":
    if path is None or str(path) == "default":
        text = resources.files(__package__).joinpath("maps/default.txt").read_text()
    else:
        text = Path(path).read_text()
    return load_map_text(text)


@dataclass
class GridMap:
    tiles: np.ndarray
    item: np.ndarray
    start: tuple[int, int]

    @property
    def shape(self) -> tuple[int, int]:
        return self.tiles.shape

    def traversable(self) -> np.ndarray:
        """(row, col) of every non-wall tile, row-major."""
        return np.argwhere(self.tiles != WALL)

    def n_keys(self) -> int:
        return int((self.tiles == KEY).sum())

    def n_doors(self) -> int:
        return int((self.tiles == DOOR).sum())


def _policy_for(fov: int) -> PolicySpec:
    side = 2 * fov + 1
    return PolicySpec((2 * side * side + 2 + N_KEYS, 32, 5), "silu", "softmax")


@dataclass
class GridWorld:
    grid: GridMap = field(default_factory=load_map)
    fov: int = 3
    steps: int = 200

    def __post_init__(self):
        self.policy = _policy_for(self.fov)

    @property
    def n_params(self) -> int:
        return self.policy.n_params

    @property
    def raw_dim(self) -> int:
        h, w = self.grid.shape
        return 3 * h * w

    @property
    def max_fitness(self) -> float:
        return KEY_REWARD * self.grid.n_keys() + DOOR_REWARD * self.grid.n_doors()

    def _initial_layers(self, p: int):
        g = self.grid
        obst = np.where(g.tiles == WALL, 1.0, np.where(g.tiles == DOOR, 0.5, 0.0))
        keys = (g.tiles == KEY).astype(np.float64)
        return np.tile(obst, (p, 1, 1)), np.tile(keys, (p, 1, 1))

    def observe(self, obst, keys, pos, held) -> np.ndarray:
        f = self.fov
        side = 2 * f + 1
        h, w = self.grid.shape
        po = np.pad(obst, ((0, 0), (f, f), (f, f)), constant_values=1.0)
        pk = np.pad(keys, ((0, 0), (f, f), (f, f)))
        idx = np.arange(len(pos))[:, None, None]
        rows = (pos[:, 0:1] + np.arange(side))[:, :, None]
        cols = (pos[:, 1:2] + np.arange(side))[:, None, :]
        crop_o = po[idx, rows, cols].reshape(len(pos), -1)
        crop_k = pk[idx, rows, cols].reshape(len(pos), -1)
        where = pos / np.array([h - 1, w - 1], dtype=np.float64)
        return np.concatenate([crop_o, crop_k, where, held.astype(np.float64)], axis=1)

    def snapshot(self, obst, keys, pos) -> np.ndarray:
        """Three-channel picture of the final state, masked to the field of view.

        Channels: structure (floor 0.25, wall 1), key codes, locked-door codes;
        the agent tile is (1, 1, 1).
        """
        g = self.grid
        p = len(pos)
        h, w = g.shape
        code = (g.item + 1) / N_KEYS
        struct = np.where(g.tiles == WALL, 1.0, 0.25)
        img = np.zeros((p, 3, h, w))
        img[:, 0] = struct
        img[:, 1] = keys * code
        img[:, 2] = (obst == 0.5) * code
        ar = np.arange(p)
        img[ar, :, pos[:, 0], pos[:, 1]] = 1.0
        rr = np.arange(h)[None, :, None]
        cc = np.arange(w)[None, None, :]
        cheb = np.maximum(np.abs(rr - pos[:, 0, None, None]), np.abs(cc - pos[:, 1, None, None]))
        img *= (cheb <= self.fov)[:, None, :, :]
        return img.reshape(p, -1)

    def evaluate(self, genomes: np.ndarray) -> EvalBatch:
        g = self.grid
        layers = self.policy.unpack(genomes)
        p = len(layers[0][0])
        obst, keys = self._initial_layers(p)
        pos = np.tile(np.array(g.start, dtype=np.int64), (p, 1))
        held = np.zeros((p, N_KEYS), dtype=bool)
        opened = np.zeros((p, N_KEYS), dtype=bool)
        fitness = np.zeros(p)
        ar = np.arange(p)
        for _ in range(self.steps):
            probs = self.policy.forward(layers, self.observe(obst, keys, pos, held))
            action = np.argmax(probs, axis=1)
            target = pos + MOVES[action]
            tr, tc = target[:, 0], target[:, 1]
            tile = g.tiles[tr, tc]
            item = g.item[tr, tc]
            is_door = tile == DOOR
            did = np.where(is_door, item, 0)
            locked = is_door & ~opened[ar, did]
            unlock = locked & held[ar, did]
            blocked = (tile == WALL) | (locked & ~unlock)
            if unlock.any():
                u = np.flatnonzero(unlock)
                opened[u, did[u]] = True
                obst[u, tr[u], tc[u]] = 0.0
                fitness[u] += DOOR_REWARD
            pos = np.where(blocked[:, None], pos, target)
            here_item = g.item[pos[:, 0], pos[:, 1]]
            on_key = g.tiles[pos[:, 0], pos[:, 1]] == KEY
            kid = np.where(on_key, here_item, 0)
            new_key = on_key & ~held[ar, kid]
            if new_key.any():
                k = np.flatnonzero(new_key)
                held[k, kid[k]] = True
                keys[k, pos[k, 0], pos[k, 1]] = 0.0
                fitness[k] += KEY_REWARD
        return EvalBatch(fitness, self.snapshot(obst, keys, pos), pos.astype(np.float64))

    def ground_truth_bounds(self) -> list[tuple[float, float]]:
        h, w = self.grid.shape
        return [(-0.5, h - 0.5), (-0.5, w - 0.5)]


def eval_gridworld(world: GridWorld, genome: np.ndarray) -> EvalOutcome:
    return world.evaluate(np.atleast_2d(genome))[0]
