"""
Error Hierarchy

Every failure the engine reports is a subclass of HydroNetError, grouped into
three families that map onto command-line exit codes:

- ConfigError    (exit 2): invalid or inconsistent configuration
- DataError      (exit 3): malformed graphs, panels, checkpoints
- NumericalError (exit 4): non-finite values, failed root finding
"""

from pydantic import ValidationError


class HydroNetError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class ConfigError(HydroNetError, ValueError):
    exit_code = 2


class DataError(HydroNetError, ValueError):
    exit_code = 3


class NumericalError(HydroNetError, ArithmeticError):
    exit_code = 4


# graph-core
class DuplicateNode(DataError):
    pass


class DanglingEdge(DataError):
    pass


class CycleDetected(DataError):
    pass


class DisconnectedComponent(DataError):
    pass


class OutletHasOutflow(DataError):
    pass


class UnknownNode(DataError):
    pass


# tensor-autodiff
class ShapeMismatch(DataError):
    pass


class WindowTooShort(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


class NotScalar(NumericalError):
    pass


class EmptyTape(NumericalError):
    pass


# dataset-io
class MissingNodeColumn(DataError):
    pass


class NonUniformStride(DataError):
    pass


class NaNValue(DataError):
    pass


class EmptyFile(DataError):
    pass


class TooShort(DataError):
    pass


class ZeroVariance(DataError):
    pass


class LagTooLarge(DataError):
    pass


# hydro-sim
class NonPositiveInput(DataError):
    pass


class FlowExceedsCapacity(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


# hydronet-model / training
class InvalidConfig(ConfigError):
    pass


class EmptyDataset(DataError):
    pass


class NonFiniteGradient(NumericalError):
    pass


class CorruptCheckpoint(DataError):
    pass


class FingerprintMismatch(DataError):
    pass


# evaluation
class EmptyInput(DataError):
    pass


class AllExcluded(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class ZeroResidualVariance(NumericalError):
    pass


def exit_code_for(exc: BaseException) -> int:
    """Map an exception onto the CLI exit-code contract."""
    if isinstance(exc, HydroNetError):
        return exc.exit_code
    if isinstance(exc, ValidationError):
        return ConfigError.exit_code
    if isinstance(exc, OSError):
        return DataError.exit_code
    return 1
