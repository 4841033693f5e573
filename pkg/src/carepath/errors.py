"""Exception types shared across the package.

Validation problems (bad input data, bad configuration) derive from
ValidationError; failures of numerical procedures derive from RuntimeFailure.
The CLI maps the former to exit code 1 and the latter to exit code 2.
"""

from __future__ import annotations


class CarepathError(Exception):
    """Base class for all package errors."""


class ValidationError(CarepathError):
    """Input data or configuration violates a documented contract."""


class RuntimeFailure(CarepathError):
    """A numerical procedure failed despite valid inputs."""


class SchemaError(ValidationError):
    """A required column is missing or the header is malformed."""


class RowError(ValidationError):
    """A row could not be parsed; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class IntegrityError(ValidationError):
    """Episode-level consistency violated (e.g. several physicians)."""


class StateRangeError(ValidationError):
    """A state component is outside its declared range."""


class GroupLookupError(ValidationError):
    """A physician has no group assignment."""


class BalanceError(RuntimeFailure):
    """Physician grouping could not reach the cost-balance tolerance."""

    def __init__(self, gap: float, tolerance: float):
        super().__init__(
            f"group mean-cost gap {gap:.2f} exceeds tolerance {tolerance:.2f}"
        )
        self.gap = gap
        self.tolerance = tolerance


class DimensionError(ValidationError):
    """A requested dimension is incompatible with the data."""


class ClusteringError(RuntimeFailure):
    """Clustering is infeasible (fewer distinct points than clusters)."""


class EstimationError(ValidationError):
    """Kernel estimation received inconsistent inputs."""


class NonConvergenceError(RuntimeFailure):
    """Value iteration hit its sweep limit before reaching tolerance."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"no convergence after {iterations} sweeps (residual {residual:.3e}); "
            "the model may contain zero-cost-free loops - retry with discount < 1"
        )
        self.residual = residual
        self.iterations = iterations


class ImproperPolicyError(RuntimeFailure):
    """A policy cannot reach the terminal state from every state."""

    def __init__(self, policy, detail: str = ""):
        msg = f"improper policy {list(policy)}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.policy = list(policy)


class EmptySupportError(ValidationError):
    """A requested empirical distribution has no observations."""


class CalibrationError(RuntimeFailure):
    """Generated data misses its calibration target."""


class FoldError(RuntimeFailure):
    """A cross-validation fold could not be made usable after retries."""


class ConfigError(ValidationError):
    """A configuration file or flag value is invalid."""


class ArtifactError(ValidationError):
    """An artifact file is missing, unreadable, or fails its schema."""
