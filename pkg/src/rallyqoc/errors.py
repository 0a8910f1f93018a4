"""Exception types raised across the toolkit."""


class RallyqocError(Exception):
    """Base class for all toolkit errors."""


class NonHermitianInput(RallyqocError):
    """A matrix required to be Hermitian failed the symmetry check."""


class DimensionMismatch(RallyqocError):
    """Operands have incompatible Hilbert-space dimensions."""


class IndexOutOfRange(RallyqocError):
    """A site index exceeds the declared system size."""


class ParseError(RallyqocError):
    """A data file failed to parse; carries the offending line number."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class LengthMismatch(RallyqocError):
    """An input array does not match the declared length."""


class GeometryViolation(RallyqocError):
    """Atom geometry violates a hardware constraint (minimum spacing)."""


class ConstraintViolation(RallyqocError):
    """A pulse parameter exits its declared domain."""


class UnsupportedSequence(RallyqocError):
    """The operation does not support this sequence kind."""


class OrderUnsupported(RallyqocError):
    """Moment order outside the supported range."""


class DimensionTooLarge(RallyqocError):
    """Dimension exceeds the cost guard for this analysis."""


class SchemaMismatch(RallyqocError):
    """A run file or config does not match the expected schema."""


class InvalidStart(RallyqocError):
    """Optimizer starting point violates its bounds."""
