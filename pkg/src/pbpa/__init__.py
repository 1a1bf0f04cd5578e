"""Pairwise body-part attention for human-object interaction recognition.

A small reverse-mode autograd on numpy (:mod:`pbpa.autograd`) carries the
whole network: ROI and ROI-pairwise max pooling (:mod:`pbpa.pooling`), the
top-k pair attention module (:mod:`pbpa.attention`) and the two-branch model
with MIL aggregation and a weighted loss (:mod:`pbpa.model`). Synthetic
scenes with known informative part pairs come from :mod:`pbpa.synthdata`.
"""

from .errors import (
    ContractError,
    DegeneratePoseError,
    DimensionError,
    FormatError,
    GenerationError,
    GraphStateError,
    NumericError,
)

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "DegeneratePoseError",
    "DimensionError",
    "FormatError",
    "GenerationError",
    "GraphStateError",
    "NumericError",
]
