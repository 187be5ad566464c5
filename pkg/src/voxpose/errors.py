"""Exception types raised across the package."""


class VoxposeError(Exception):
    """Base class for all package errors."""


class NonSkewInput(VoxposeError, ValueError):
    pass


class OutOfBoundsPixel(VoxposeError, ValueError):
    pass


class OutOfGrid(VoxposeError, ValueError):
    pass


class GridFormatError(VoxposeError, ValueError):
    """Grid file could not be decoded."""


class BadMagic(GridFormatError):
    pass


class UnsupportedVersion(GridFormatError):
    pass


class CorruptLength(GridFormatError):
    pass


class LengthMismatch(VoxposeError, ValueError):
    pass


class ShapeMismatch(VoxposeError, ValueError):
    pass


class UnsupportedKind(VoxposeError, ValueError):
    pass


class BadSpec(VoxposeError, ValueError):
    """A JSON config or spec object failed validation."""


class NonFiniteUpdate(VoxposeError, FloatingPointError):
    """Raised when a pose update produces NaN or inf.

    The partial trace recorded up to the failing epoch is attached so callers
    can inspect what led to the blow-up.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
