"""Config files, experiment runs, artifacts, renders and summaries."""
from .config import ExperimentConfig, dump_config, load_config, parse_config_text, preset_config
from .runner import RunArtifacts, build_experiment, run_experiment

__all__ = [
    "ExperimentConfig",
    "RunArtifacts",
    "build_experiment",
    "dump_config",
    "load_config",
    "parse_config_text",
    "preset_config",
    "run_experiment",
]
