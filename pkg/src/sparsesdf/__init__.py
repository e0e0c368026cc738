"""Signed distance fields from single sparse unoriented point clouds.

A chart network maps unit-square samples onto the shape to densify the
sparse input on the fly, while a spline-based field network learns signed
distances by pulling Gaussian queries onto those chart samples with
per-target confidence weights.  Everything runs on a small float64
reverse-mode engine that supports differentiating through input gradients,
which the pull loss requires.
"""

__version__ = "0.1.0"

from .errors import (
    InternalConsistencyError,
    InvalidInputError,
    NumericalError,
    ParseError,
    SparseSdfError,
    TrainingError,
)
from .geometry import (
    NormalizationTransform,
    PointCloud,
    TriangleMesh,
    chamfer_l1,
    chamfer_l2,
    local_sigma,
    nearest_neighbor,
    normal_consistency,
    normalize_cloud,
    sample_gaussian_queries,
    sample_mesh_surface,
)
from .trainer import TrainConfig, TrainState, train

__all__ = [
    "__version__",
    "SparseSdfError",
    "InvalidInputError",
    "NumericalError",
    "InternalConsistencyError",
    "ParseError",
    "TrainingError",
    "PointCloud",
    "NormalizationTransform",
    "TriangleMesh",
    "normalize_cloud",
    "nearest_neighbor",
    "chamfer_l1",
    "chamfer_l2",
    "normal_consistency",
    "sample_mesh_surface",
    "sample_gaussian_queries",
    "local_sigma",
    "TrainConfig",
    "TrainState",
    "train",
]
