"""Exception types shared across the package."""


class ONCFError(Exception):
    """Base class for all package errors."""


class DimensionError(ONCFError, ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class DatasetError(ONCFError):
    """Input data could not be parsed or is empty after processing."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ProtocolError(ONCFError):
    """The evaluation protocol cannot be applied to the data as given."""


class SamplingError(ONCFError):
    """No valid negative item exists for some user."""


class ConfigError(ONCFError, ValueError):
    """Invalid or inconsistent model/training configuration."""


class NumericError(ONCFError, FloatingPointError):
    """A non-finite value appeared during training."""

    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
