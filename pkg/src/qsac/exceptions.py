from mkdocs.exceptions import ConfigurationError


class QsacError(Exception):
    """Base class for errors raised by the qsac stack"""


class DivergenceError(QsacError):
    """A forward pass, gradient or bootstrap target stopped being finite"""


class EpisodeDoneError(QsacError):
    """step() was called on an episode that already terminated"""


class UnreachableTargetError(QsacError, ValueError):
    pass


class DegenerateTargetError(QsacError, ValueError):
    pass


class CalibrationError(QsacError):
    """No usable benchmark gains: the grid never solved every episode, or gains were never calibrated"""


class BufferNotReadyError(QsacError):
    """The replay buffer holds fewer transitions than a batch needs"""


class NotEvaluableError(QsacError):
    pass


__all__ = [
    "ConfigurationError",
    "QsacError",
    "DivergenceError",
    "EpisodeDoneError",
    "UnreachableTargetError",
    "DegenerateTargetError",
    "CalibrationError",
    "BufferNotReadyError",
    "NotEvaluableError",
]
