"""Exception hierarchy.

Each error carries a ``category`` used by the command line to pick an exit code.
"""


class IonMuxError(Exception):
    category = "numeric"


class ConfigError(IonMuxError):
    category = "config"


class InputError(IonMuxError):
    category = "input"


class NumericError(IonMuxError):
    category = "numeric"


class ConvergenceError(NumericError):
    category = "convergence"


class UnstableChainError(NumericError):
    pass


class ChainMeltedError(NumericError):
    """Two neighbouring ions came closer than the melt threshold."""


class CutoffError(NumericError):
    """A phonon-number truncation is too small for the requested state."""


class TimeTagFormatError(InputError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
