"""Feed-forward policies whose weights are a flat genome.

Evaluation is batched over a population: each individual has its own weight
matrices, applied with stacked ``matmul`` so every row is computed
independently of how the population is chunked.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..autodiff import ACTIVATIONS, ConfigurationError, activation_forward


@dataclass(frozen=True)
class PolicySpec:
    sizes: tuple[int, ...]
    hidden: str
    output: str

    def __post_init__(self):
        for kind in (self.hidden, self.output):
            if kind not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {kind!r}")

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def unpack(self, genomes: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        g = np.atleast_2d(np.asarray(genomes, dtype=np.float64))
        if g.shape[1] != self.n_params:
            raise ValueError(f"genome length {g.shape[1]} != policy parameter count {self.n_params}")
        layers = []
        off = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            w = g[:, off : off + a * b].reshape(len(g), a, b)
            off += a * b
            bias = g[:, off : off + b]
            off += b
            layers.append((w, bias))
        return layers

    def forward(self, layers, x: np.ndarray) -> np.ndarray:
        """x: (P, in) -> (P, out) using per-individual weights."""
        last = len(layers) - 1
        for i, (w, b) in enumerate(layers):
            x = np.matmul(x[:, None, :], w)[:, 0, :] + b
            kind = self.output if i == last else self.hidden
            x = activation_forward(kind, x, axis=-1)
        return x


def random_genomes(n: int, n_params: int, rng: np.random.Generator, init_range: float = 1.0) -> np.ndarray:
    return rng.uniform(-init_range, init_range, size=(n, n_params))


def chunks(n: int, size: int) -> Sequence[slice]:
    return [slice(s, min(s + size, n)) for s in range(0, n, size)]
