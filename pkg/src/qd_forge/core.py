"""The evolutionary loop: bootstrap, select, vary, evaluate, insert, and
periodically retrain the behavior model and reassign the archive.

One loop drives four algorithms:

* ``vq-elites``: grid cells are the VQ-VAE codebook entries.
* ``map-elites``: a fixed hand-designed grid over the ground-truth descriptor.
* ``aurora`` / ``aurora-dagger``: an autoencoder latent with a distance-threshold
  archive and container-size control.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import ConfigurationError
from .containers import (
    ADDED,
    INSERTED,
    REPLACED,
    GridContainer,
    HardcodedGridSpec,
    Individual,
    UnstructuredArchive,
)
from .environments.base import EvalBatch
from .environments.mobile import raster_iou
from .environments.policy import chunks, random_genomes
from .metrics import GroundTruthGrid, MetricsRecord, compute_record
from .vqvae import Architecture, VqLossReport, VqVaeModel, nearest_code, train_epochs

log = logging.getLogger(__name__)

ALGORITHMS = ("vq-elites", "map-elites", "aurora", "aurora-dagger")
LEARNED = ("vq-elites", "aurora", "aurora-dagger")


# ---------------------------------------------------------------- settings


@dataclass
class VariationParams:
    p_crossover: float = 0.5
    p_mutation: float = 0.2
    sigma: float = 0.05
    init_range: float = 1.0

    def validate(self) -> None:
        for name in ("p_crossover", "p_mutation"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be non-negative, got {self.sigma}")
        if self.init_range <= 0:
            raise ConfigurationError(f"init_range must be positive, got {self.init_range}")


@dataclass
class RunSchedule:
    iterations: int = 3000
    population: int = 128
    n_update: int = 5
    epochs: int = 10
    n_cooperation: int = 0
    bootstrap_count: int = 128
    bootstrap_epochs: int = 100
    batch_size: int = 64
    metrics_interval: int = 10
    seed: int = 0

    def validate(self) -> None:
        for name in ("population", "n_update", "batch_size", "metrics_interval"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("iterations", "epochs", "n_cooperation", "bootstrap_count", "bootstrap_epochs"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative, got {getattr(self, name)}")

    def cooperating(self, iteration: int) -> bool:
        """Iterations are counted from 1; the first ``n_cooperation`` cooperate."""
        return iteration <= self.n_cooperation

    def updates_at(self, iteration: int) -> bool:
        return iteration % self.n_update == 0


@dataclass
class ContainerParams:
    """Settings for the distance-threshold archive of the AURORA baselines."""

    target_size: int = 2000
    max_size: int | None = None
    d_init: float = 1e-5
    d_min: float = 1e-5
    d_max: float = 1.0
    k_csc: float = 5e-4

    def resolved_max(self) -> int:
        return self.max_size if self.max_size is not None else int(round(2.5 * self.target_size))


# ---------------------------------------------------------------- storage


class ExperienceStore:
    """Bounded FIFO of raw behavior records used as the model's training set.

    With ``dedup`` on, an incoming raster is dropped when its occupied-pixel
    IoU with any retained record (or an earlier record of the same batch)
    exceeds ``dedup_threshold``.
    """

    def __init__(self, dim: int, capacity: int = 50_000, dedup: bool = False, dedup_threshold: float = 0.9):
        if capacity <= 0:
            raise ConfigurationError(f"store capacity must be positive, got {capacity}")
        self.dim = dim
        self.capacity = capacity
        self.dedup = dedup
        self.dedup_threshold = dedup_threshold
        self._buf = np.zeros((capacity, dim))
        self._start = 0
        self._size = 0
        self.dropped = 0

    def __len__(self) -> int:
        return self._size

    def records(self) -> np.ndarray:
        """Retained records, oldest first."""
        idx = (self._start + np.arange(self._size)) % self.capacity
        return self._buf[idx].copy()

    def _novel(self, batch: np.ndarray) -> np.ndarray:
        keep = np.ones(len(batch), dtype=bool)
        if self._size:
            keep &= raster_iou(batch, self.records()).max(1) <= self.dedup_threshold
        self_iou = raster_iou(batch, batch)
        for i in range(len(batch)):
            if keep[i]:
                later = np.arange(len(batch)) > i
                keep &= ~(later & (self_iou[i] > self.dedup_threshold))
        return keep

    def append(self, batch: np.ndarray) -> int:
        """Append rows of ``batch``; returns how many were retained."""
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        if len(batch) == 0:
            return 0
        if batch.shape[1] != self.dim:
            raise ValueError(f"record length {batch.shape[1]} != store dim {self.dim}")
        if self.dedup:
            keep = self._novel(batch)
            self.dropped += int((~keep).sum())
            batch = batch[keep]
        for row in batch[-self.capacity:]:
            pos = (self._start + self._size) % self.capacity
            self._buf[pos] = row
            if self._size < self.capacity:
                self._size += 1
            else:
                self._start = (self._start + 1) % self.capacity
        return len(batch)


# -------------------------------------------------------------- run state


@dataclass
class StepReport:
    iteration: int
    evaluated: int
    skipped: int
    inserted: int
    replaced: int
    best_fitness: float
    mean_fitness: float


@dataclass
class UpdateReport:
    iteration: int
    losses: list[VqLossReport]
    before: int
    after: int
    mismatched_cells: int


@dataclass
class QDSetup:
    """Everything one run needs besides the environment."""

    algorithm: str = "vq-elites"
    schedule: RunSchedule = field(default_factory=RunSchedule)
    variation: VariationParams = field(default_factory=VariationParams)
    architecture: Architecture | None = None
    container: ContainerParams = field(default_factory=ContainerParams)
    grid: HardcodedGridSpec | None = None
    store_capacity: int = 50_000
    dedup: bool = False
    dedup_threshold: float = 0.9
    eval_workers: int = 1

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        self.schedule.validate()
        self.variation.validate()
        if self.algorithm in LEARNED and self.architecture is None:
            raise ConfigurationError(f"algorithm {self.algorithm} needs a model architecture")
        if self.algorithm == "map-elites":
            if self.grid is None:
                raise ConfigurationError("map-elites needs a hand-designed grid")
            self.grid.validate()
        if self.eval_workers < 1:
            raise ConfigurationError(f"eval_workers must be >= 1, got {self.eval_workers}")


class QDState:
    """Mutable state of a run: archive, model, store and random streams."""

    def __init__(self, env, setup: QDSetup):
        setup.validate()
        self.env = env
        self.setup = setup
        self.schedule = setup.schedule
        seeds = np.random.SeedSequence(setup.schedule.seed).spawn(4)
        self.rng_evo = np.random.default_rng(seeds[0])
        self.rng_train = np.random.default_rng(seeds[1])
        self.rng_boot = np.random.default_rng(seeds[2])
        model_seed = int(seeds[3].generate_state(1)[0])
        self.model: VqVaeModel | None = None
        self.generation = 0
        self.iteration = 0
        self.updates: list[UpdateReport] = []
        self.store = ExperienceStore(env.raw_dim, setup.store_capacity, setup.dedup, setup.dedup_threshold)
        alg = setup.algorithm
        if alg in LEARNED:
            arch = setup.architecture
            if arch.input_dim != env.raw_dim:
                raise ConfigurationError(
                    f"model input_dim {arch.input_dim} != environment raw record length {env.raw_dim}"
                )
            if alg != "vq-elites" and arch.vector_quantized:
                raise ConfigurationError(f"{alg} uses a plain autoencoder; set vector_quantized off")
            self.model = VqVaeModel(arch, seed=model_seed)
        if alg == "vq-elites":
            self.archive = GridContainer(self.model.codebook_array)
        elif alg == "map-elites":
            self.archive = GridContainer(setup.grid.centers())
        else:
            c = setup.container
            self.archive = UnstructuredArchive(
                setup.architecture.latent_dim, c.target_size, c.resolved_max(), c.d_init, c.d_min, c.d_max, c.k_csc
            )

    @property
    def algorithm(self) -> str:
        return self.setup.algorithm

    # -- evaluation
    def evaluate(self, genomes: np.ndarray) -> EvalBatch:
        """Evaluate a population; chunked over worker threads, results in child order."""
        n = len(genomes)
        workers = min(self.setup.eval_workers, max(n, 1))
        if workers <= 1:
            return self.env.evaluate(genomes)
        size = -(-n // workers)
        parts = [genomes[s] for s in chunks(n, size)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(self.env.evaluate, parts))
        return EvalBatch.concat(results)

    def descriptors(self, batch: EvalBatch) -> np.ndarray:
        if self.algorithm == "map-elites":
            return np.asarray(batch.ground_truth_bd, dtype=np.float64)
        return self.model.encode(batch.raw_bd)

    def cells_for(self, latents: np.ndarray) -> np.ndarray | None:
        if isinstance(self.archive, GridContainer):
            return nearest_code(self.archive.centers, latents)
        return None


# ------------------------------------------------------------- operations


def _offer(
    state: QDState, genomes: np.ndarray, batch: EvalBatch, cooperation: bool, store: bool = True
) -> tuple[int, int, int]:
    """Encode and insert a batch in child order; returns (inserted, replaced, skipped)."""
    ok = np.isfinite(batch.fitness)
    skipped = int((~ok).sum())
    if skipped:
        log.warning("iteration %d: skipped %d children with non-finite fitness", state.iteration, skipped)
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return 0, 0, skipped
    sub = EvalBatch(batch.fitness[idx], batch.raw_bd[idx], batch.ground_truth_bd[idx])
    if store and state.model is not None:
        state.store.append(sub.raw_bd)
    latents = state.descriptors(sub)
    cells = state.cells_for(latents)
    inserted = replaced = 0
    for j, i in enumerate(idx):
        ind = Individual(
            genome=genomes[i].copy(),
            fitness=float(sub.fitness[j]),
            raw_bd=np.array(sub.raw_bd[j]),
            latent_bd=latents[j].copy(),
            ground_truth_bd=np.array(sub.ground_truth_bd[j]),
            generation=state.generation,
        )
        if cells is not None:
            outcome = state.archive.insert(ind, cooperation, cell=int(cells[j]))
        else:
            outcome = state.archive.insert(ind, cooperation)
        if outcome in (INSERTED, ADDED):
            inserted += 1
        elif outcome == REPLACED:
            replaced += 1
    return inserted, replaced, skipped


def bootstrap(state: QDState) -> list[VqLossReport]:
    """Evaluate random genomes, warm-start the model on their records, install
    the resulting grid and offer the evaluated individuals to the archive."""
    sched = state.schedule
    k = sched.bootstrap_count
    if k == 0:
        return []
    genomes = random_genomes(k, state.env.n_params, state.rng_boot, state.setup.variation.init_range)
    try:
        batch = state.evaluate(genomes)
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise RuntimeError(f"bootstrap evaluation failed: {exc}") from exc
    losses: list[VqLossReport] = []
    if state.model is not None:
        ok = np.isfinite(batch.fitness)
        state.store.append(batch.raw_bd[ok])
        losses = train_epochs(state.model, state.store.records(), sched.bootstrap_epochs, sched.batch_size,
                              state.rng_train)
        state.generation += 1
        if state.algorithm == "vq-elites":
            state.archive.set_centers(state.model.codebook_array)
        _offer(state, genomes, batch, cooperation=False, store=False)
    else:
        _offer(state, genomes, batch, cooperation=False)
    return losses


def select(archive, batch: int, rng: np.random.Generator, n_params: int, init_range: float = 1.0) -> np.ndarray:
    """Uniform draws with replacement over archive members; an empty archive
    yields fresh random genomes."""
    members = archive.members()
    if not members:
        return random_genomes(batch, n_params, rng, init_range)
    pick = rng.integers(0, len(members), size=batch)
    return np.stack([members[i].genome for i in pick])


def variation(parents: np.ndarray, rng: np.random.Generator, params: VariationParams) -> np.ndarray:
    """Uniform crossover with a random partner (probability ``p_crossover``),
    then per-gene Gaussian mutation (probability ``p_mutation``)."""
    parents = np.atleast_2d(np.asarray(parents, dtype=np.float64))
    n, d = parents.shape
    children = parents.copy()
    do_cross = rng.random(n) < params.p_crossover
    partners = rng.integers(0, n, size=n)
    swap = rng.random((n, d)) < 0.5
    if n >= 2:
        mix = do_cross[:, None] & swap
        children = np.where(mix, parents[partners], children)
    mutate = rng.random((n, d)) < params.p_mutation
    noise = rng.normal(0.0, 1.0, size=(n, d)) * params.sigma
    return children + np.where(mutate, noise, 0.0)


def evolution_step(state: QDState, iteration: int) -> StepReport:
    state.iteration = iteration
    sched = state.schedule
    var = state.setup.variation
    parents = select(state.archive, sched.population, state.rng_evo, state.env.n_params, var.init_range)
    children = variation(parents, state.rng_evo, var)
    batch = state.evaluate(children)
    ins, rep, skipped = _offer(state, children, batch, sched.cooperating(iteration))
    fit = batch.fitness[np.isfinite(batch.fitness)]
    if isinstance(state.archive, UnstructuredArchive):
        state.archive.csc_adapt()
    return StepReport(
        iteration, len(children) - skipped, skipped, ins, rep,
        float(fit.max()) if len(fit) else float("nan"), float(fit.mean()) if len(fit) else float("nan"),
    )


def audit_cells(state: QDState) -> int:
    """Number of grid members whose stored cell is not the nearest center of
    their freshly re-encoded raw record."""
    if not isinstance(state.archive, GridContainer):
        return 0
    members = state.archive.members()
    if not members:
        return 0
    if state.model is None:
        bds = np.array([m.ground_truth_bd for m in members])
    else:
        bds = state.model.encode(np.array([m.raw_bd for m in members]))
    cells = nearest_code(state.archive.centers, bds)
    return int(sum(int(c) != m.cell for c, m in zip(cells, members)))


def update_model_and_archive(state: QDState) -> UpdateReport:
    """Retrain on the store, install the new grid and reassign every member."""
    sched = state.schedule
    before = len(state.archive)
    if state.model is None:
        return UpdateReport(state.iteration, [], before, before, audit_cells(state))
    losses = train_epochs(state.model, state.store.records(), sched.epochs, sched.batch_size, state.rng_train)
    state.generation += 1
    if isinstance(state.archive, GridContainer):
        old = state.archive.set_centers(state.model.codebook_array)
    else:
        old = state.archive.members()
        state.archive.clear()
    if old:
        latents = state.model.encode(np.array([m.raw_bd for m in old]))
        cells = state.cells_for(latents)
        for j, m in enumerate(old):
            m.latent_bd = latents[j].copy()
            m.generation = state.generation
            if cells is not None:
                state.archive.insert(m, cell=int(cells[j]))
            else:
                state.archive.insert(m)
    report = UpdateReport(state.iteration, losses, before, len(state.archive), audit_cells(state))
    if report.mismatched_cells:
        log.error("iteration %d: %d members sit in the wrong cell after update",
                  state.iteration, report.mismatched_cells)
    state.updates.append(report)
    return report


# ------------------------------------------------------------------ driver


@dataclass
class RunResult:
    state: QDState
    metrics: list[MetricsRecord]
    updates: list[UpdateReport]
    steps: list[StepReport]
    bootstrap_losses: list[VqLossReport]

    @property
    def archive(self):
        return self.state.archive


def run(
    env,
    setup: QDSetup,
    projection: GroundTruthGrid | None = None,
    on_metrics: Callable[[MetricsRecord], None] | None = None,
    on_update: Callable[[QDState, UpdateReport], None] | None = None,
    on_iteration: Callable[[QDState, int], None] | None = None,
) -> RunResult:
    """Bootstrap, then ``iterations`` evolution steps with a model update every
    ``n_update`` steps. Metrics are taken after bootstrap, every
    ``metrics_interval`` iterations and at the end.

    ``on_update`` sees the state right after each model update and
    ``on_iteration`` after every full iteration (step plus any update)."""
    state = QDState(env, setup)
    sched = setup.schedule
    if setup.algorithm == "map-elites" and setup.architecture is not None:
        log.info("map-elites uses a hand-designed grid; the model section is ignored")
    metrics: list[MetricsRecord] = []
    steps: list[StepReport] = []

    def sample(it: int) -> None:
        if projection is None:
            return
        rec = compute_record(it, state.archive, projection)
        metrics.append(rec)
        if on_metrics is not None:
            on_metrics(rec)

    boot = bootstrap(state)
    sample(0)
    for it in range(1, sched.iterations + 1):
        try:
            steps.append(evolution_step(state, it))
            if state.model is not None and sched.updates_at(it):
                rep = update_model_and_archive(state)
                if on_update is not None:
                    on_update(state, rep)
        except ConfigurationError:
            raise
        except Exception as exc:
            raise RuntimeError(f"run failed at iteration {it}: {exc}") from exc
        if on_iteration is not None:
            on_iteration(state, it)
        if it % sched.metrics_interval == 0 or it == sched.iterations:
            sample(it)
    return RunResult(state, metrics, list(state.updates), steps, boot)
