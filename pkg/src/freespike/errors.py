"""Exception hierarchy shared by all modules."""
from __future__ import annotations


class FreeSpikeError(Exception):
    """Base class for every error raised by the package."""


class DomainError(FreeSpikeError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class ConfigError(FreeSpikeError, ValueError):
    """Invalid configuration or construction parameters."""


class PlanError(ConfigError):
    """An experiment plan cannot run the requested suite."""


class SingularityError(DomainError):
    """A linear system or diagonal entry is singular at the requested point."""


class SolverError(FreeSpikeError, RuntimeError):
    """An iterative solver failed; carries its last iterate."""

    def __init__(self, message, *, last=None, residual=None, iterations=None):
        super().__init__(message)
        self.last = last
        self.residual = residual
        self.iterations = iterations


class EdgeInconsistencyError(FreeSpikeError, RuntimeError):
    """The parametric edge and the density cross-check disagree."""

    def __init__(self, message, *, parametric=None, density_based=None):
        super().__init__(message)
        self.parametric = parametric
        self.density_based = density_based


class NumericError(FreeSpikeError, RuntimeError):
    """A dense linear-algebra routine failed to converge."""
