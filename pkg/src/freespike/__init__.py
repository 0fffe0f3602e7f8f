"""Outliers and eigenvectors of spiked free multiplicative convolutions.

The package computes subordination functions of ``mu_A ⊠ mu_B`` for atomic
measures, locates the upper spectral edge, predicts where spiked eigenvalues
land and how their eigenvectors align, and checks those predictions against
Monte Carlo samples of ``A^{1/2} U B U* A^{1/2}`` with Haar ``U``.
"""
from __future__ import annotations

from ._backend import BACKEND, COMPILED
from .edge import EdgeData, inverse_omega_A, inverse_omega_B, locate_upper_edge
from .errors import (
    ConfigError,
    DomainError,
    EdgeInconsistencyError,
    FreeSpikeError,
    NumericError,
    PlanError,
    SingularityError,
    SolverError,
)
from .measure import AtomicMeasure, DensitySpec, discretize, levy_distance, m_transform, stieltjes
from .spike import SpikeModel, classify, predict
from .subordination import ConvolutionHandle, SolverOptions, SubordinationValue, solve, solve_grid

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "COMPILED",
    "AtomicMeasure",
    "DensitySpec",
    "discretize",
    "levy_distance",
    "stieltjes",
    "m_transform",
    "SolverOptions",
    "SubordinationValue",
    "ConvolutionHandle",
    "solve",
    "solve_grid",
    "EdgeData",
    "locate_upper_edge",
    "inverse_omega_A",
    "inverse_omega_B",
    "SpikeModel",
    "classify",
    "predict",
    "FreeSpikeError",
    "DomainError",
    "ConfigError",
    "PlanError",
    "SingularityError",
    "SolverError",
    "EdgeInconsistencyError",
    "NumericError",
]
