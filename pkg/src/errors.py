"""
Exception hierarchy shared by every SPINE service.

Each error carries a machine-readable ``code`` (the same idea as the
``ErrorResponse.code`` field the HTTP layer used to return) and the process
``exit_code`` the command line maps it to.
"""
from typing import Any, Optional


class SpineError(Exception):
    """Base class for all library errors."""

    code = "SPINE_ERROR"
    exit_code = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> dict[str, Any]:
        return {"error": type(self).__name__, "detail": self.message, "code": self.code}


class StructureError(SpineError):
    """Invalid set structure, dimension mismatch or bad sharing topology."""

    code = "STRUCTURE_INVALID"
    exit_code = 1


class StructureSyntaxError(StructureError):
    """Grammar error in structure text, annotated with line and column."""

    code = "STRUCTURE_SYNTAX"

    def __init__(self, line: int, column: int, expected: str):
        super().__init__(f"{line}:{column}: expected {expected}", line=line, column=column)
        self.line = line
        self.column = column
        self.expected = expected


class GrowthLimitError(StructureError):
    """Targeted learning would grow the model past its polytope cap."""

    code = "GROWTH_LIMIT"


class InputError(SpineError):
    """Caller-supplied values are unusable (non-finite, wrong size, empty region)."""

    code = "INPUT_INVALID"
    exit_code = 2


class DataError(SpineError):
    """A dataset file could not be parsed."""

    code = "DATA_INVALID"
    exit_code = 2


class NumericalError(SpineError):
    """A non-finite value appeared inside a computation."""

    code = "NUMERICAL_ERROR"
    exit_code = 3

    def __init__(self, message: str, component: Optional[int] = None, **context: Any):
        super().__init__(message, component=component, **context)
        self.component = component


class DivergenceError(NumericalError):
    """Training loss became non-finite; ``history`` holds the epochs completed."""

    code = "TRAINING_DIVERGED"

    def __init__(self, message: str, history: Any = None):
        super().__init__(message)
        self.history = history
