"""Upscaling of discrete fracture-matrix conductivity models.

Fracture network generation, correlated tensor conductivity fields,
voxelization, finite-volume Darcy solves, block homogenization and a
numpy 3D CNN surrogate for the equivalent conductivity tensor.
"""
from .errors import (ConfigError, DataError, DfmupError, EmbeddingError, FormatError, ParameterError,
                     SolverError, VersionError)

__version__ = "0.1.0"

__all__ = ["DfmupError", "ParameterError", "DataError", "FormatError", "VersionError", "ConfigError",
           "SolverError", "EmbeddingError", "__version__"]
