"""Piecewise linear and parabolic interface reconstruction with Lagrangian-remap advection in 2D."""
from .advect import AdvectionState, CFLViolation, advance
from .curvature import ghf_field
from .fields import (Circle, Flower, Grid, HalfPlane, StaggeredVelocity, UniformVelocity, VortexVelocity,
                     error_norms, init_moments_exact)
from .geom2d import InterfaceCut, Moments2, Point2, Polygon, clip_halfplane, clip_parabola_moments, polygon_moments
from .harness import ExperimentConfig, fit_order, run_experiment
from .reconstruct import Method, reconstruct_cell, reconstruct_field

__version__ = "0.1.0"

__all__ = [
    "AdvectionState", "CFLViolation", "advance",
    "ghf_field",
    "Circle", "Flower", "Grid", "HalfPlane", "StaggeredVelocity", "UniformVelocity", "VortexVelocity",
    "error_norms", "init_moments_exact",
    "InterfaceCut", "Moments2", "Point2", "Polygon", "clip_halfplane", "clip_parabola_moments", "polygon_moments",
    "ExperimentConfig", "fit_order", "run_experiment",
    "Method", "reconstruct_cell", "reconstruct_field",
]
