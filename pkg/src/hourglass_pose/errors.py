"""Exception hierarchy shared by all subpackages."""


class HourglassError(Exception):
    """Base class for every error raised by this package."""


class DataError(HourglassError):
    """Problems with inputs on disk or with their contents."""


class NumericalError(HourglassError):
    """Degenerate or non-finite numbers."""


# geometry / loss
class ZeroNormError(NumericalError, ValueError):
    pass


class NotARotationError(NumericalError, ValueError):
    pass


class NotUnitError(NumericalError, ValueError):
    pass


class MalformedMatrixError(DataError, ValueError):
    pass


class NonUnitTargetError(NumericalError, ValueError):
    pass


class EmptyBatchError(HourglassError, ValueError):
    pass


# model
class InvalidConfigError(HourglassError, ValueError):
    pass


class ShapeMismatchError(HourglassError, ValueError):
    pass


class UninitializedModelError(HourglassError, RuntimeError):
    pass


class CorruptCheckpointError(DataError):
    pass


# data
class LayoutError(DataError):
    pass


class PoseParseError(DataError):
    pass


class EmptySetError(DataError, ValueError):
    pass


class ZeroVarianceError(DataError, ValueError):
    pass


class TooSmallError(DataError, ValueError):
    pass


# training
class OutOfRangeError(HourglassError, ValueError):
    pass


class NonFiniteLossError(NumericalError):
    """Raised when the training loss stops being finite.

    ``epoch`` and ``step`` identify the offending optimizer step.
    """

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


# evaluation
class EmptyInputError(HourglassError, ValueError):
    pass


class UnsortedEdgesError(HourglassError, ValueError):
    pass
