"""
Exception hierarchy shared by every package.

Each error carries the structured context a caller needs to report it
(offending parameter, byte offset, path) instead of only a message.
"""
from typing import Optional


class FedCycleError(Exception):
    """Root of all errors raised by this project."""


# ============================================================================
# tensor
# ============================================================================

class ShapeError(FedCycleError):
    """Input shapes are not valid for an operation."""

    def __init__(self, op_kind: str, shapes: list, detail: str = ""):
        """
        Initialize the exception.

        Args:
            op_kind: Operation that rejected its inputs
            shapes: Shapes of the offending inputs
            detail: Optional explanation
        """
        message = f"{op_kind}: invalid input shapes {shapes}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)
        self.op_kind = op_kind
        self.shapes = shapes


class UnknownOpError(FedCycleError):
    """An op kind was requested that is not in the registry."""


class TapeError(FedCycleError):
    """Misuse of a tape: consumed tape, non-scalar loss, loss not recorded."""


class NonDeterministicError(FedCycleError):
    """A function handed to the gradient oracle returned different values for equal inputs."""


class NumericAbortError(FedCycleError):
    """Numerical failure that must stop a run (NaN/Inf gradients, diverged losses)."""

    def __init__(self, message: str, parameter: Optional[str] = None):
        super().__init__(message)
        self.parameter = parameter


class NonFiniteError(NumericAbortError):
    """A tensor, gradient or payload contains NaN or Inf."""


# ============================================================================
# nn / objectives
# ============================================================================

class ModelConfigError(FedCycleError):
    """Model configuration or AdaIN code does not fit the network."""


class ObjectiveError(FedCycleError):
    """Loss evaluation was asked for with an empty batch or mismatched tensors."""


# ============================================================================
# fed
# ============================================================================

class SelectionError(FedCycleError):
    """Client selection was asked for an impossible subset size."""


class AggregationError(FedCycleError):
    """Gradient messages cannot be aggregated together."""


# ============================================================================
# transport
# ============================================================================

class CodecError(FedCycleError):
    """A byte string is not a valid gradient message."""

    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message)
        self.offset = offset


class ChecksumError(CodecError):
    """CRC32 of the received bytes does not match the trailing checksum."""


class TruncatedError(CodecError):
    """Buffer ends before the layout it declares."""


class UnknownVersionError(CodecError):
    """Protocol version field is not one this codec understands."""

    def __init__(self, version: int):
        super().__init__(f"Unknown protocol version {version:#06x}")
        self.version = version


class LengthOverflowError(CodecError):
    """Declared lengths exceed the buffer or the codec limits."""


class TransportError(FedCycleError):
    """Failure while moving frames between endpoints."""


class FrameTooLargeError(TransportError):
    """Frame length exceeds the configured cap."""

    def __init__(self, length: int, cap: int):
        super().__init__(f"Frame of {length} bytes exceeds cap of {cap} bytes")
        self.length = length
        self.cap = cap


class ConnectionClosedError(TransportError):
    """Peer closed the connection before a whole frame arrived."""


# ============================================================================
# data / cli
# ============================================================================

class DatasetError(FedCycleError):
    """Dataset generation or dataset file failure."""


class MetricError(FedCycleError):
    """Metric inputs are invalid (shape mismatch, too few samples)."""


class ConfigError(FedCycleError):
    """Experiment configuration failed to load or validate."""


class ArtifactError(FedCycleError):
    """A run directory is missing an artifact."""

    def __init__(self, path: str, what: str = "artifact"):
        super().__init__(f"Missing {what}: {path}")
        self.path = path
