"""Incompressible flow stepping: boundary handling, momentum, pressure."""

from .bc import (
    BoundaryConditions,
    BlockMasks,
    MaskCache,
    apply_velocity_bc,
    assign_global_solids,
    build_block_masks,
    fill_pressure_ghosts,
    fill_velocity_axis,
    restrict_flags_majority,
    sync_flags,
    zero_solid_faces,
)
from .ops import (
    compute_explicit,
    correct_block,
    divergence_block,
    predict_block,
    stable_dt,
)
from .ops import Scratch
from .poisson import InlineDriver, PoissonController, PoissonSolver, PoissonReport, build_block_coeffs

__all__ = [
    "BoundaryConditions",
    "BlockMasks",
    "MaskCache",
    "apply_velocity_bc",
    "assign_global_solids",
    "build_block_masks",
    "fill_pressure_ghosts",
    "fill_velocity_axis",
    "restrict_flags_majority",
    "sync_flags",
    "zero_solid_faces",
    "compute_explicit",
    "correct_block",
    "divergence_block",
    "predict_block",
    "stable_dt",
    "Scratch",
    "InlineDriver",
    "build_block_coeffs",
    "PoissonController",
    "PoissonSolver",
    "PoissonReport",
]
