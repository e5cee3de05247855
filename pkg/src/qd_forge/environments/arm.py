"""Six-joint serial arm reaching a goal point; joint velocities come from the policy."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import ConfigurationError
from .base import EvalBatch, EvalOutcome
from .policy import PolicySpec

DEFAULT_LIMIT = 2.967
CONSTRAINED_LIMIT = 0.5
CONSTRAINED_JOINTS = (0, 1)

ARM_POLICY = PolicySpec((6, 32, 32, 6), "gaussian", "identity")


# (a, b) such that R @ rot(axis, q) sets col_a = c*col_a + s*col_b, col_b = c*col_b - s*col_a
_MIX = {"z": (0, 1), "y": (2, 0), "x": (1, 2)}


@dataclass
class ArmChain:
    axes: tuple[str, ...] = ("z", "y", "z", "y", "z", "y")
    link_length: float = 0.2
    limits: np.ndarray = field(default_factory=lambda: np.full((6, 2), [-DEFAULT_LIMIT, DEFAULT_LIMIT]))
    goal: tuple[float, float, float] = (0.3, 0.0, 0.5)
    steps: int = 300
    dt: float = 0.01
    v_joint_max: float = 1.0
    start: np.ndarray = field(default_factory=lambda: np.zeros(6))
    policy: PolicySpec = ARM_POLICY

    @classmethod
    def preset(cls, constrained: bool = False, **overrides) -> "ArmChain":
        limits = np.full((6, 2), [-DEFAULT_LIMIT, DEFAULT_LIMIT])
        if constrained:
            limits[list(CONSTRAINED_JOINTS)] = [-CONSTRAINED_LIMIT, CONSTRAINED_LIMIT]
        return cls(limits=limits, **overrides)

    def __post_init__(self):
        self.limits = np.array(self.limits, dtype=np.float64)
        self.start = np.clip(np.array(self.start, dtype=np.float64), self.limits[:, 0], self.limits[:, 1])
        if self.limits.shape != (len(self.axes), 2):
            raise ConfigurationError("limits must be (n_joints, 2)")

    @property
    def n_joints(self) -> int:
        return len(self.axes)

    @property
    def n_params(self) -> int:
        return self.policy.n_params

    @property
    def raw_dim(self) -> int:
        return self.n_joints

    def forward_kinematics(self, q: np.ndarray) -> np.ndarray:
        """Tip position(s) for joint vector(s) ``q`` (..., n_joints) -> (..., 3)."""
        q = np.asarray(q, dtype=np.float64)
        lead = q.shape[:-1]
        # columns of the accumulated rotation; right-multiplying by an elementary
        # rotation only mixes two of them
        cols = [np.broadcast_to(e, lead + (3,)) for e in np.eye(3)]
        tip = np.zeros(lead + (3,))
        for i, axis in enumerate(self.axes):
            a, b = _MIX.get(axis, (None, None))
            if a is None:
                raise ConfigurationError(f"unknown joint axis {axis!r}")
            c, s = np.cos(q[..., i])[..., None], np.sin(q[..., i])[..., None]
            ca, cb = cols[a], cols[b]
            cols[a], cols[b] = c * ca + s * cb, c * cb - s * ca
            tip = tip + self.link_length * cols[2]
        return tip

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.limits[:, 0], self.limits[:, 1])

    def rollout(self, genomes: np.ndarray, record: bool = False):
        layers = self.policy.unpack(genomes)
        p = len(layers[0][0])
        q = np.tile(self.start, (p, 1))
        history = [] if record else None
        for _ in range(self.steps):
            v = np.clip(self.policy.forward(layers, q), -self.v_joint_max, self.v_joint_max)
            q = self.clamp(q + v * self.dt)
            if record:
                history.append(q.copy())
        return (q, np.array(history)) if record else q

    def fitness(self, q: np.ndarray) -> np.ndarray:
        err = np.asarray(self.goal) - self.forward_kinematics(q)
        return np.exp(-np.sqrt((err * err).sum(-1)))

    def evaluate(self, genomes: np.ndarray) -> EvalBatch:
        q = self.rollout(genomes)
        return EvalBatch(self.fitness(q), q.copy(), q.copy())

    def ground_truth_bounds(self) -> list[tuple[float, float]]:
        return [tuple(l) for l in self.limits]


def eval_arm(chain: ArmChain, genome: np.ndarray) -> EvalOutcome:
    return chain.evaluate(np.atleast_2d(genome))[0]


def sample_goal_configurations(
    chain: ArmChain,
    epsilon: float,
    n_target: int,
    budget: int,
    rng: np.random.Generator,
    chunk: int = 200_000,
) -> np.ndarray:
    """Rejection-sample joint vectors within limits whose tip lies within
    ``epsilon`` of the goal. Stops at ``n_target`` accepted or ``budget`` drawn."""
    lo, hi = chain.limits[:, 0], chain.limits[:, 1]
    goal = np.asarray(chain.goal)
    accepted = []
    count = 0
    drawn = 0
    while drawn < budget and count < n_target:
        n = min(chunk, budget - drawn)
        q = rng.uniform(lo, hi, size=(n, chain.n_joints))
        drawn += n
        err = chain.forward_kinematics(q) - goal
        ok = (err * err).sum(1) <= epsilon * epsilon
        accepted.append(q[ok])
        count += int(ok.sum())
    out = np.concatenate(accepted) if accepted else np.empty((0, chain.n_joints))
    return out[:n_target]
