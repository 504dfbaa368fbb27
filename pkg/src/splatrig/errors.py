"""Exception types raised across the package."""


class SplatRigError(Exception):
    """Base class for every error raised by splatrig."""


class DegenerateTriangle(SplatRigError, ValueError):
    """A triangle's area is below the degeneracy threshold."""

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = indices


class DimensionMismatch(SplatRigError, ValueError):
    pass


class ShapeMismatch(SplatRigError, ValueError):
    pass


class StateMissing(SplatRigError, RuntimeError):
    """Backward pass requested after forward buffers were released."""


class NonFiniteLoss(SplatRigError, FloatingPointError):
    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


class DataError(SplatRigError):
    """Problems with files on disk; the CLI maps these to exit code 2."""


class IoError(DataError, OSError):
    pass


class SchemaError(DataError, ValueError):
    pass


class CountMismatch(DataError, ValueError):
    def __init__(self, message, expected=None, actual=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class HashMismatch(DataError, ValueError):
    pass
