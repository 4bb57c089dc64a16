"""Exception hierarchy shared by every grnn module."""


class GrnnError(Exception):
    """Base class; the CLI maps each subclass to a distinct error code."""

    code = "error"


class DimensionError(GrnnError, ValueError):
    """A tensor argument has the wrong shape along a named axis."""

    code = "dimension"

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class NonFiniteError(GrnnError, FloatingPointError):
    """A layer produced NaN or Inf."""

    code = "non-finite"

    def __init__(self, layer, message=None):
        super().__init__(message or f"non-finite activation in layer {layer!r}")
        self.layer = layer


class DataError(GrnnError):
    code = "data"


class EmptySequenceError(DataError):
    code = "empty-sequence"


class FrameDecodeError(DataError):
    code = "frame-decode"


class FrameSizeMismatchError(DataError):
    code = "frame-size-mismatch"


class MalformedArchiveError(GrnnError):
    code = "malformed-archive"


class ConfigError(GrnnError):
    code = "config"
