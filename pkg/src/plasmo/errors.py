"""Exception hierarchy shared by every plasmo module."""


class PlasmoError(Exception):
    """Base class for all errors raised by plasmo."""


class InvalidArgumentError(PlasmoError, ValueError):
    pass


class PassivityError(PlasmoError, ValueError):
    """A permittivity with negative imaginary part (gain) was supplied."""


class FitQualityError(PlasmoError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class GeometryError(PlasmoError, ValueError):
    pass


class DivergenceError(PlasmoError, FloatingPointError):
    def __init__(self, message, step=None, epoch=None, batch=None):
        super().__init__(message)
        self.step = step
        self.epoch = epoch
        self.batch = batch


class MonitorLookupError(PlasmoError, KeyError):
    def __init__(self, message, available=()):
        super().__init__(message)
        self.available = tuple(available)

    def __str__(self):
        return self.args[0]


class DegenerateFeatureError(PlasmoError, ValueError):
    pass


class EncodingError(PlasmoError, ValueError):
    pass


class ImputationError(PlasmoError, ValueError):
    pass


class SplitError(PlasmoError, ValueError):
    pass


class SweepError(PlasmoError):
    pass


class ShapeError(PlasmoError, ValueError):
    pass


class UsageError(PlasmoError, RuntimeError):
    pass


class FormatError(PlasmoError, ValueError):
    pass


class EvaluationError(PlasmoError, ValueError):
    pass


class GroupingError(PlasmoError, ValueError):
    pass


class ParseError(PlasmoError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
