"""Mixing ray transforms on two-dimensional conformal disks."""
from .errors import (
    ConditioningError,
    ContractError,
    ConvergenceError,
    DomainError,
    MixrayError,
    NonTerminatingRayError,
    StencilError,
)
from .geometry import MetricField, RayCoordinate, boundary_grid, grid_angles, shoot_geodesic
from .grid import GridModel
from .tensors import AutomorphismField, GridField, Mixing, PolynomialField, apply_mixing, mixing_for_mixed
from .transforms import Sinogram, geodesic_xray, mixed_xray, mixing_xray, transverse_xray

__version__ = "0.1.0"

__all__ = [
    "AutomorphismField",
    "ConditioningError",
    "ContractError",
    "ConvergenceError",
    "DomainError",
    "GridField",
    "GridModel",
    "MetricField",
    "Mixing",
    "MixrayError",
    "NonTerminatingRayError",
    "PolynomialField",
    "RayCoordinate",
    "Sinogram",
    "StencilError",
    "apply_mixing",
    "boundary_grid",
    "geodesic_xray",
    "grid_angles",
    "mixed_xray",
    "mixing_for_mixed",
    "mixing_xray",
    "shoot_geodesic",
    "transverse_xray",
]
