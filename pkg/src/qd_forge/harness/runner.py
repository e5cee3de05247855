"""Turns a config into environment, loop settings and ground truth, runs it and
writes the artifacts of one run directory."""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

from .. import __version__
from ..containers import HardcodedGridSpec
from ..core import ContainerParams, QDSetup, RunResult, RunSchedule, VariationParams, run
from ..environments.arm import ArmChain
from ..environments.gridworld import GridWorld, load_map
from ..environments.mobile import MobileWorld
from ..metrics import UNIFORM, GroundTruthGrid, arm_ground_truth, build_ground_truth
from ..vqvae import Architecture
from .artifacts import MetricsWriter, save_model, write_archive, write_json
from .config import ExperimentConfig, dump_config

log = logging.getLogger(__name__)

OUT_ENV = "QD_FORGE_OUT"
METRICS_FILE = "metrics.csv"
ARCHIVE_FILE = "archive.bin"
MODEL_FILE = "model.npz"
MANIFEST_FILE = "manifest.json"
CONFIG_FILE = "config.ini"


@dataclass
class Experiment:
    config: ExperimentConfig
    env: object
    setup: QDSetup
    ground_truth: GroundTruthGrid


@dataclass
class RunArtifacts:
    directory: Path
    metrics: Path
    archive: Path
    model: Path | None
    manifest: Path
    result: RunResult | None = None


def build_environment(cfg: ExperimentConfig):
    e = cfg.environment
    extra = {} if e.steps is None else {"steps": e.steps}
    if e.kind == "mobile":
        return MobileWorld.preset(e.walls, raster=e.raster, **extra)
    if e.kind == "arm":
        return ArmChain.preset(constrained=e.constrained, **extra)
    return GridWorld(grid=load_map(e.map), fov=e.fov, **extra)


def _arm_gt(chain: ArmChain, cfg: ExperimentConfig) -> GroundTruthGrid:
    m = cfg.metrics
    return arm_ground_truth(chain, epsilon=m.arm_epsilon, n_target=m.arm_samples, budget=m.arm_budget,
                            k=m.arm_centroids, seed=m.arm_seed)


def build_ground_truth_for(cfg: ExperimentConfig, env) -> GroundTruthGrid:
    if isinstance(env, ArmChain):
        return _arm_gt(env, cfg)
    if isinstance(env, MobileWorld):
        return build_ground_truth(env, bins=cfg.metrics.bins)
    return build_ground_truth(env)


def _hand_grid(cfg: ExperimentConfig, env, gt: GroundTruthGrid) -> HardcodedGridSpec:
    if cfg.algorithm.grid == "unconstrained":
        free = ArmChain.preset(constrained=False)
        return HardcodedGridSpec(centroids=_arm_gt(free, cfg).centroids)
    if gt.kind == UNIFORM:
        return HardcodedGridSpec(bounds=list(gt.bounds), bins=list(gt.bins))
    return HardcodedGridSpec(centroids=gt.centroids)


def _architecture(cfg: ExperimentConfig, env) -> Architecture:
    m = cfg.model
    shape = None
    if isinstance(env, MobileWorld):
        shape = (env.raster, env.raster)
    elif isinstance(env, GridWorld):
        h, w = env.grid.shape
        shape = (3, h, w)
    return Architecture(
        input_dim=env.raw_dim,
        latent_dim=m.latent_dim,
        codebook_size=cfg.algorithm.archive_size,
        encoder_hidden=tuple(m.encoder_hidden),
        decoder_hidden=tuple(m.decoder_hidden),
        activation=m.activation,
        output_activation=m.output_activation,
        bounded=bool(m.bounded),
        codebook_init=m.codebook_init,
        vector_quantized=cfg.algorithm.algorithm == "vq-elites",
        beta=m.beta,
        lr=m.lr,
        input_norm=m.input_norm,
        input_shape=shape,
        input_blur=m.input_blur if shape is not None else 0.0,
    )


def build_experiment(cfg: ExperimentConfig, eval_workers: int | None = None) -> Experiment:
    env = build_environment(cfg)
    gt = build_ground_truth_for(cfg, env)
    a = cfg.algorithm
    schedule = RunSchedule(
        iterations=a.iterations, population=a.population, n_update=a.n_update, epochs=a.epochs,
        n_cooperation=a.n_cooperation, bootstrap_count=a.bootstrap_count,
        bootstrap_epochs=a.bootstrap_epochs, batch_size=a.batch_size,
        metrics_interval=cfg.metrics.interval, seed=cfg.experiment.seed,
    )
    setup = QDSetup(
        algorithm=a.algorithm,
        schedule=schedule,
        variation=VariationParams(a.p_crossover, a.p_mutation, a.sigma),
        architecture=_architecture(cfg, env),
        container=ContainerParams(a.archive_size, a.max_size, a.d_init, a.d_min, a.d_max, a.k_csc),
        grid=_hand_grid(cfg, env, gt) if a.algorithm == "map-elites" else None,
        store_capacity=a.store_capacity,
        dedup=a.dedup,
        dedup_threshold=a.dedup_threshold,
        eval_workers=eval_workers if eval_workers is not None else a.eval_workers,
    )
    if a.algorithm == "map-elites":
        log.info("map-elites uses a hand-designed grid; the [model] section is ignored")
    setup.validate()
    return Experiment(cfg, env, setup, gt)


def default_run_dir(cfg: ExperimentConfig) -> Path:
    root = cfg.experiment.output_dir
    if root == "auto":
        root = os.environ.get(OUT_ENV, "runs")
    return Path(root) / f"{cfg.experiment.name}-seed{cfg.experiment.seed}"


def run_experiment(
    cfg: ExperimentConfig, out_dir: str | Path | None = None, eval_workers: int | None = None
) -> RunArtifacts:
    """Run one config and write ``config.ini``, ``metrics.csv``, ``archive.bin``,
    ``model.npz`` (learned algorithms only) and ``manifest.json``."""
    exp = build_experiment(cfg, eval_workers)
    out = Path(out_dir) if out_dir is not None else default_run_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    canonical = dump_config(cfg)
    (out / CONFIG_FILE).write_text(canonical)
    started = time.perf_counter()
    with MetricsWriter(out / METRICS_FILE) as writer:
        result = run(exp.env, exp.setup, exp.ground_truth, on_metrics=writer.write)
    log.info("run finished in %.1f s", time.perf_counter() - started)
    snap = write_archive(out / ARCHIVE_FILE, result.archive)
    model_path = None
    if result.state.model is not None:
        model_path = out / MODEL_FILE
        save_model(model_path, result.state.model)
    final = result.metrics[-1] if result.metrics else None
    manifest = {
        "config_hash": cfg.config_hash(),
        "config_file": CONFIG_FILE,
        "seed": cfg.experiment.seed,
        "code_version": __version__,
        "experiment": cfg.experiment.experiment,
        "algorithm": cfg.algorithm.algorithm,
        "files": {
            "metrics": METRICS_FILE,
            "archive": ARCHIVE_FILE,
            "model": MODEL_FILE if model_path else None,
        },
        "archive": {
            "kind": "grid" if snap.kind == 0 else "unstructured",
            "members": len(snap.members),
            "cells": int(len(snap.centers)),
        },
        "model_updates": len(result.updates),
        "mismatched_cells": int(sum(u.mismatched_cells for u in result.updates)),
        "final": None if final is None else dict(zip(final.CSV_FIELDS, map(float, final.row()))),
    }
    write_json(out / MANIFEST_FILE, manifest)
    return RunArtifacts(out, out / METRICS_FILE, out / ARCHIVE_FILE, model_path, out / MANIFEST_FILE, result)


def ground_truth_bounds(cfg: ExperimentConfig) -> list[tuple[float, float]]:
    env = build_environment(cfg)
    return [tuple(map(float, b)) for b in env.ground_truth_bounds()]

