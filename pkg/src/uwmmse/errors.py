"""Exception types shared across the package."""


class UwmmseError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatch(UwmmseError):
    """Operands have incompatible shapes."""


class SingularMatrix(UwmmseError):
    """Dense factorization detected rank deficiency below tolerance."""


class DegenerateDiagonal(UwmmseError):
    """A diagonal entry is too small for element-wise reciprocal."""


class DegenerateInput(UwmmseError):
    """Input is degenerate for the requested operation (e.g. all-zero precoder)."""


class DimensionExceeds(UwmmseError):
    """Source dimensions exceed the padding target."""


class FormatError(UwmmseError):
    """A serialized file has a bad magic, version, or truncated payload."""


class TrainingError(UwmmseError):
    """Numerical failure during training, annotated with iteration/sample context."""
