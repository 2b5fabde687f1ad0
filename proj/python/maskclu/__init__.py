"""Masked point-cloud pretraining with cluster-guided objectives."""

from ._core import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    FormatError,
    NumericError,
    ParameterError,
    Session,
    SizeError,
    build_graph,
    chamfer,
    default_config,
    farthest_point_sample,
    generate_dataset,
    gradcheck,
    knn,
    sinkhorn,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "DomainError",
    "FormatError",
    "NumericError",
    "ParameterError",
    "Session",
    "SizeError",
    "build_graph",
    "chamfer",
    "default_config",
    "farthest_point_sample",
    "generate_dataset",
    "gradcheck",
    "knn",
    "sinkhorn",
]
