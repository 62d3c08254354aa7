"""Exception hierarchy shared by every fedaws module."""


class FedAwSError(Exception):
    """Base class for all library errors."""


class ZeroNorm(FedAwSError, ValueError):
    pass


class DimensionMismatch(FedAwSError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NotNormalized(FedAwSError, ValueError):
    pass


class VocabOutOfRange(FedAwSError, IndexError):
    pass


class ClassOutOfRange(FedAwSError, IndexError):
    pass


class MarginOutOfTheoryRange(FedAwSError, ValueError):
    """Raised when a theory check is asked to run with nu outside (1, 2)."""


class KTooLarge(FedAwSError, ValueError):
    pass


class EmptyShard(FedAwSError, ValueError):
    pass


class DuplicateClient(FedAwSError, ValueError):
    pass


class UnknownClass(FedAwSError, ValueError):
    pass


class CountOutOfRange(FedAwSError, ValueError):
    pass


class SingleClass(FedAwSError, ValueError):
    pass


class RhoZero(FedAwSError, ValueError):
    pass


class UnbalancedShards(FedAwSError, ValueError):
    pass


class NumericalFailure(FedAwSError, FloatingPointError):
    """A NaN or Inf appeared in model parameters."""


class ParseError(FedAwSError, ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class IndexOutOfRange(ParseError):
    pass
