"""Quality-diversity optimization with learned, vector-quantized behavior grids."""
__version__ = "0.1.0"

from .autodiff import ConfigurationError, DimensionError
from .containers import GridContainer, HardcodedGridSpec, Individual, UnstructuredArchive, hardcoded_grid
from .core import ContainerParams, QDSetup, RunResult, RunSchedule, VariationParams, run
from .metrics import GroundTruthGrid, MetricsRecord, build_ground_truth, cds, coverage, edr, pqd_score
from .vqvae import Architecture, VqVaeModel, init_codebook_kmeans, quantize, train_epochs

__all__ = [
    "__version__",
    "Architecture",
    "ConfigurationError",
    "ContainerParams",
    "DimensionError",
    "GridContainer",
    "GroundTruthGrid",
    "HardcodedGridSpec",
    "Individual",
    "MetricsRecord",
    "QDSetup",
    "RunResult",
    "RunSchedule",
    "UnstructuredArchive",
    "VariationParams",
    "VqVaeModel",
    "build_ground_truth",
    "cds",
    "coverage",
    "edr",
    "hardcoded_grid",
    "init_codebook_kmeans",
    "pqd_score",
    "quantize",
    "run",
    "train_epochs",
]
