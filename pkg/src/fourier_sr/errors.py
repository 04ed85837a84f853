"""Exception types raised across the toolkit."""


class FourierSRError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(FourierSRError, ValueError):
    """Array shapes or dimensions do not satisfy an operation's contract."""


class FormatError(FourierSRError):
    """A file does not follow the expected binary layout."""


class MalformedHeaderError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class UnsupportedMaxvalError(FormatError):
    pass


class NumericError(FourierSRError, ArithmeticError):
    """A loss or gradient became NaN or infinite."""

    def __init__(self, message, term=None, iteration=None):
        super().__init__(message)
        self.term = term
        self.iteration = iteration
