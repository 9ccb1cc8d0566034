"""Exception hierarchy shared by every quap module."""


class QuapError(Exception):
    """Base class for all library errors."""


class ShapeError(QuapError, ValueError):
    pass


class DomainError(QuapError, ValueError):
    pass


class BudgetError(QuapError):
    """An image would be queried more often than the ledger allows."""

    def __init__(self, message, image_id=None):
        super().__init__(message)
        self.image_id = image_id


class ProtocolError(QuapError):
    """A query left the epsilon neighbourhood of its base image."""

    def __init__(self, message, image_id=None):
        super().__init__(message)
        self.image_id = image_id


class ParseError(QuapError, ValueError):
    def __init__(self, message, offset=0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DatasetExhausted(QuapError):
    """The stream cannot supply the requested number of fresh images."""


class ConfigurationError(QuapError, ValueError):
    pass


class DivergenceError(QuapError, FloatingPointError):
    pass


class NumericalDegeneracyError(QuapError, ArithmeticError):
    def __init__(self, message, matrix=None):
        super().__init__(message)
        self.matrix = matrix


class EvaluationError(QuapError):
    pass


class RunError(QuapError):
    """One repetition of an experiment aborted; ``run_index`` says which."""

    def __init__(self, message, run_index):
        super().__init__(f"run {run_index}: {message}")
        self.run_index = run_index
