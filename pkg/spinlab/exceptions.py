"""Error hierarchy shared by every SpinLab module.

Each error carries a stable ``error_code`` (used in the machine-readable
record the CLI writes to standard error) and the process ``exit_code``
the driver maps it to: 1 for invalid input, 2 for numerical checks that
did not hold.
"""

from typing import Any


class SpinLabError(Exception):
    """Base class for all SpinLab errors."""

    error_code = "SpinLabError"
    exit_code = 2

    def __init__(self, message: str = "", **details: Any):
        """Initialize error.

        Args:
            message: Human readable description
            **details: Extra context included in the error record
        """
        super().__init__(message or self.error_code)
        self.message = message or self.error_code
        self.details = details

    def to_record(self) -> dict[str, Any]:
        """Build the JSON error record written by the CLI."""
        return {
            "error": self.error_code,
            "message": self.message,
            "details": self.details,
        }


# Input validation (exit 1)


class ConfigError(SpinLabError):
    """Raised when a run configuration cannot be used."""

    error_code = "ConfigError"
    exit_code = 1


class ConfigParse(ConfigError):
    """Raised when a configuration file does not parse or validate."""

    error_code = "ConfigParse"


class ModelValidationError(SpinLabError):
    """Raised when a model violates the hypotheses it is checked against."""

    error_code = "ModelValidation"
    exit_code = 1


class SymmetryViolation(ModelValidationError):
    """Single-site measure is not invariant under the symmetry group."""

    error_code = "SymmetryViolation"


class FerromagnetismViolation(ModelValidationError):
    """Some bond has J^1 < sum_k |J^k|."""

    error_code = "FerromagnetismViolation"


class RangeViolation(ModelValidationError):
    """Nonzero coupling at or beyond the declared range."""

    error_code = "RangeViolation"


class ConfigMismatch(ModelValidationError):
    """Spin configuration does not match the lattice or the measure."""

    error_code = "ConfigMismatch"


class UnsupportedDimension(ModelValidationError):
    """No sphere quadrature is provided for this number of components."""

    error_code = "UnsupportedDimension"


class InvalidSlots(ModelValidationError):
    """Sites or components of an n-point function are out of bounds."""

    error_code = "InvalidSlots"


class NotIsingType(ModelValidationError):
    """Model does not have two-atom spins at +1 and -1."""

    error_code = "NotIsingType"


class NotAChain(ModelValidationError):
    """Model cannot be reduced to a nearest-neighbour chain."""

    error_code = "NotAChain"


class OutsideHalfPlane(ModelValidationError):
    """Field has Re h <= 0 where Re h > 0 is required."""

    error_code = "OutsideHalfPlane"


# Numerical failures (exit 2)


class ComputationError(SpinLabError):
    """Raised when a computation cannot produce a trustworthy value."""

    error_code = "ComputationError"


class BudgetExceeded(ComputationError):
    """Enumeration would exceed its configured budget."""

    error_code = "BudgetExceeded"


class GraphBudgetExceeded(BudgetExceeded):
    """Connected-graph sum would exceed its configured budget."""

    error_code = "GraphBudgetExceeded"


class NumericalFailure(ComputationError):
    """Floating-point overflow or a failed linear-algebra routine."""

    error_code = "NumericalFailure"


class ZeroNormalizer(ComputationError):
    """Laplace transform vanishes at the tilting parameter."""

    error_code = "ZeroNormalizer"


class ZeroPartition(ComputationError):
    """Partition function vanishes, so averages are undefined."""

    error_code = "ZeroPartition"


class MissingMoment(ComputationError):
    """A joint moment needed by the cumulant formula is absent."""

    error_code = "MissingMoment"


class DegenerateTop(ComputationError):
    """Top two transfer eigenvalues have equal modulus."""

    error_code = "DegenerateTop"

    def __init__(self, message: str = "", **details: Any):
        """Initialize error with the degenerate gap value of zero."""
        details.setdefault("gap", 0.0)
        super().__init__(message, **details)
        self.gap = 0.0


class RootFindingFailure(ComputationError):
    """Polynomial roots could not be verified by their residuals."""

    error_code = "RootFindingFailure"


class DenominatorZero(ComputationError):
    """Laplace transform vanishes on a sampled vertical segment."""

    error_code = "DenominatorZero"


class NoWedgeFound(ComputationError):
    """No grid point satisfies the wedge bound."""

    error_code = "NoWedgeFound"


class NotFound(ComputationError):
    """Search terminated at its cap without success."""

    error_code = "NotFound"


class NotInConvergenceRegion(ComputationError):
    """Field is below the convergence threshold of the expansion."""

    error_code = "NotInConvergenceRegion"


class InsufficientData(ComputationError):
    """Too few usable samples for a fit."""

    error_code = "InsufficientData"


class NonDecay(ComputationError):
    """Fitted decay rate is negative."""

    error_code = "NonDecay"


class CheckFailure(SpinLabError):
    """Raised when a numerical acceptance check fails."""

    error_code = "CheckFailure"


class SampleTooCoarse(CheckFailure):
    """Interior maximum exceeds the boundary maximum."""

    error_code = "SampleTooCoarse"


# Output (exit 2)


class OutputError(SpinLabError):
    """Raised when results cannot be written."""

    error_code = "OutputError"


class IoFailure(OutputError):
    """Result file could not be written."""

    error_code = "IoFailure"


class EmptyResults(OutputError):
    """Nothing to write."""

    error_code = "EmptyResults"
