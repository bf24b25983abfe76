"""Exception hierarchy shared by every module of the package."""


class RlsaError(Exception):
    """Base class for all errors raised by rlsa."""


class NegativeEntry(RlsaError, ValueError):
    pass


class RowSumMismatch(RlsaError, ValueError):
    pass


class NotErgodic(RlsaError):
    """The chain is reducible or periodic, so the requested object does not exist."""


class NoConvergence(RlsaError):
    pass


class EnvelopeViolated(RlsaError):
    """Internal consistency failure: a mixing envelope derived from a certificate does not hold."""


class RankDeficient(RlsaError, ValueError):
    pass


class SingularA(RlsaError):
    pass


class NotNegativeDefinite(RlsaError):
    pass


class HorizonExceeded(RlsaError, ValueError):
    pass


class NuOutOfRange(RlsaError, ValueError):
    pass


class ScheduleNotRobbinsMonro(RlsaError, ValueError):
    pass


class DriftViolated(RlsaError):
    pass


class TraceTooShort(RlsaError, ValueError):
    pass


class GrowthViolated(RlsaError):
    pass


class RecursionInfeasible(RlsaError):
    pass


class ConfigError(RlsaError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class MatrixFormatError(RlsaError, ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")
