"""Exception hierarchy.

Every error carries the exit code the command-line interface maps it to.
"""

from typing import Sequence


class FDFTError(Exception):
    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# Tensor-core misuse

class ShapeMismatchError(FDFTError, ValueError):
    def __init__(self, op: str, *shapes: Sequence[int], reason: str = ""):
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        message = f"{op}: incompatible shapes {rendered}"
        if reason:
            message = f"{message} ({reason})"
        super().__init__(message)
        self.op = op
        self.shapes = [tuple(s) for s in shapes]


class AxisError(FDFTError, ValueError):
    pass


class NonScalarLossError(FDFTError, ValueError):
    pass


class GraphReleasedError(FDFTError, RuntimeError):
    pass


# Configuration

class ConfigError(FDFTError, ValueError):
    exit_code = 2


# Data

class DataError(FDFTError):
    exit_code = 3


class UnsupportedImageFormatError(DataError):
    pass


class MalformedImageError(DataError):
    pass


class EmptyClassDirectoryError(DataError):
    pass


class EmptySplitError(DataError):
    pass


class InvalidLabelError(DataError, ValueError):
    pass


# Checkpoints

class CheckpointError(FDFTError):
    exit_code = 3


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class MissingParameterError(CheckpointError):
    def __init__(self, names: Sequence[str]):
        super().__init__(f"missing parameter(s): {', '.join(names)}")
        self.names = list(names)


class UnexpectedParameterError(CheckpointError):
    def __init__(self, names: Sequence[str]):
        super().__init__(f"unexpected parameter(s): {', '.join(names)}")
        self.names = list(names)


class DuplicateParameterError(CheckpointError):
    def __init__(self, name: str):
        super().__init__(f"parameter stored more than once: {name}")
        self.name = name


class CheckpointMismatchError(CheckpointError):
    pass


# Numerical failures

class NonFiniteError(FDFTError, ArithmeticError):
    exit_code = 4


class NonFiniteLossError(NonFiniteError):
    pass


# Metrics

class MetricError(FDFTError, ValueError):
    exit_code = 3


class SingleClassError(MetricError):
    pass


class LengthMismatchError(MetricError):
    pass
