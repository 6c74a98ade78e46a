"""Sequential step-down multiple testing with FDR/pFDR control under dependence."""

from .core import (
    BoundResult,
    StepVector,
    bh_steps,
    bl_steps,
    d_bound,
    d_bound_at,
    scale_for_fdr,
    scale_for_pfdr,
)
from . import errors

__version__ = "0.1.0"

__all__ = [
    "StepVector",
    "BoundResult",
    "d_bound_at",
    "d_bound",
    "bh_steps",
    "bl_steps",
    "scale_for_fdr",
    "scale_for_pfdr",
    "errors",
    "__version__",
]
