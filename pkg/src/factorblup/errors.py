"""Exception hierarchy. Two families matter for the CLI exit codes:
DataValidationError (exit 2) and NumericalError (exit 3)."""


class FactorBlupError(Exception):
    """Base class for all package errors."""


class DataValidationError(FactorBlupError):
    """Malformed or inconsistent input data or design."""


class DesignError(DataValidationError):
    """Invalid trial design (unknown genotype, bad plot mapping, ...)."""


class ShapeError(DataValidationError):
    """Dimension mismatch between related arrays."""


class MissingGenotypeError(DataValidationError):
    """A genotype has no plots (or no data rows)."""


class PartitionError(DataValidationError):
    """Train/test id sets overlap, or ids are unknown to the kinship matrix."""


class ScenarioError(DataValidationError):
    """Data required by the requested CV scenario is absent."""


class TooFewTraitsError(DataValidationError):
    """Operation needs more traits than supplied."""


class TooFewTimepointsError(DataValidationError):
    """Operation needs more timepoints than supplied."""


class ExtrapolationError(DataValidationError):
    """Requested evaluation outside the fitted timepoint range."""


class AlignmentError(DataValidationError):
    """Loadings series cannot be aligned (e.g. differing factor counts)."""


class InsufficientReplicationError(DataValidationError):
    """Residual degrees of freedom are non-positive (n <= g)."""


class BaselineDegenerateError(DataValidationError):
    """Too few columns survive the redundancy filter."""


class NumericalError(FactorBlupError):
    """Numerical failure (singularity, indefiniteness, non-finite values)."""


class DegenerateVarianceError(NumericalError):
    """A trait has zero or negative variance where positive is required."""


class MatrixConditionError(NumericalError):
    """Matrix is singular, non-positive-definite or too ill-conditioned."""


class AmbiguousAssignmentError(NumericalError):
    """Rotation has a zero row or column; nearest signed permutation undefined."""


class UndefinedHeritabilityError(NumericalError):
    """Both variance components are zero."""


class UndefinedPAError(NumericalError):
    """Predictive ability undefined (zero variance in one of the vectors)."""
