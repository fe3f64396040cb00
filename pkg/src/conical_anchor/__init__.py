"""Sampling-based anchor selection for conical hulls and separable NMF."""
from .dca import AnchorSet, ProjectionSpec, generate_projections, solve
from .estimator import ConicalHullAnchors
from .exceptions import (
    MatrixFormatError,
    RejectionLimitError,
    SketchRankError,
    SubproblemError,
    VoteShortfallError,
    ZeroNormError,
)
from .matstore import SampledMatrix, build, load_matrix
from .sketch import ImplicitBasis, SketchConfig, subsample

__version__ = "0.1.0"

__all__ = [
    "AnchorSet",
    "ConicalHullAnchors",
    "ImplicitBasis",
    "MatrixFormatError",
    "ProjectionSpec",
    "RejectionLimitError",
    "SampledMatrix",
    "SketchConfig",
    "SketchRankError",
    "SubproblemError",
    "VoteShortfallError",
    "ZeroNormError",
    "build",
    "generate_projections",
    "load_matrix",
    "solve",
    "subsample",
]
