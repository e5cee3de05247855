"""Benchmark tasks evaluated in batches of genomes."""
from .arm import ArmChain, eval_arm
from .base import EvalBatch, EvalOutcome
from .gridworld import GridMap, GridWorld, eval_gridworld, load_map, load_map_text
from .mobile import MobileWorld, eval_mobile, filter_duplicates, raster_iou
from .policy import PolicySpec, random_genomes

__all__ = [
    "ArmChain",
    "EvalBatch",
    "EvalOutcome",
    "GridMap",
    "GridWorld",
    "MobileWorld",
    "PolicySpec",
    "eval_arm",
    "eval_gridworld",
    "eval_mobile",
    "filter_duplicates",
    "load_map",
    "load_map_text",
    "random_genomes",
    "raster_iou",
]
