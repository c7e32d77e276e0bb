"""Exception hierarchy.

Everything raised on bad input derives from :class:`ValidationError`; the CLI
maps those to exit code 1.
"""


class ValidationError(ValueError):
    """Input does not describe a valid problem."""


class InvalidQ(ValidationError):
    pass


class NonpositiveLength(ValidationError):
    pass


class MultipleRoots(ValidationError):
    pass


class CycleOrDisconnected(ValidationError):
    pass


class FeasibilityViolated(ValidationError):
    """Raised when ``T_j <= (q - 1) * entry_time_j`` for some non-root edge."""

    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


class OutOfRange(ValueError):
    pass


class NoHistory(RuntimeError):
    pass


class MeshMismatch(ValueError):
    pass


class StepRejected(ArithmeticError):
    def __init__(self, message, edge=None, step=None):
        super().__init__(message)
        self.edge = edge
        self.step = step


class NotPositiveDefinite(ArithmeticError):
    pass


class NotAChain(ValidationError):
    pass


class TooFewLevels(ValidationError):
    pass


class ParseError(ValidationError):
    """Malformed problem file. ``field``/``line`` locate the problem when known."""

    def __init__(self, message, field=None, line=None):
        where = []
        if field is not None:
            where.append(f"field {field!r}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.field = field
        self.line = line
