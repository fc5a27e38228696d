"""Simulation and verification toolkit for long-range weakly asymmetric exclusion."""
from .model import (
    ModelParams,
    Segment,
    Torus,
    InvalidParamsError,
    derive_constants,
    mean_invariance_residual,
    validate_params,
    jump_rate,
    continuum_match,
)
from .dynamics import SpinConfig, Trajectory, simulate, evolve_law_exact, generator_matrix

__version__ = "0.1.0"
