from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EvalOutcome:
    fitness: float
    raw_bd: np.ndarray
    ground_truth_bd: np.ndarray


@dataclass
class EvalBatch:
    """Column-stacked outcomes of a population, row i for genome i."""

    fitness: np.ndarray
    raw_bd: np.ndarray
    ground_truth_bd: np.ndarray

    def __len__(self) -> int:
        return len(self.fitness)

    def __getitem__(self, i: int) -> EvalOutcome:
        return EvalOutcome(float(self.fitness[i]), self.raw_bd[i], self.ground_truth_bd[i])

    @classmethod
    def concat(cls, parts: list["EvalBatch"]) -> "EvalBatch":
        return cls(
            np.concatenate([p.fitness for p in parts]),
            np.concatenate([p.raw_bd for p in parts]),
            np.concatenate([p.ground_truth_bd for p in parts]),
        )
