"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class ToleranceKitError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""

    exit_code = 3


class ParseError(ToleranceKitError):
    """Syntax error in expression text."""

    exit_code = 65

    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        self.offset = offset
        self.expected = tuple(expected)
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at offset {offset}{detail}")


class UnknownIdentifierError(ParseError):
    def __init__(self, name: str, offset: int):
        self.name = name
        super().__init__(f"unknown identifier {name!r}", offset)


class DomainError(ToleranceKitError):
    """Expression evaluated outside its domain (division by zero, log of a non-positive, ...)."""

    exit_code = 4

    def __init__(self, message: str, subexpr=None):
        self.subexpr = subexpr
        where = f" in {subexpr}" if subexpr is not None else ""
        super().__init__(message + where)


class SystemDefinitionError(ToleranceKitError):
    exit_code = 65


class IntegrationError(ToleranceKitError):
    """Step-size underflow or a similar integrator breakdown."""

    exit_code = 5

    def __init__(self, message: str, t: float | None = None, state=None):
        self.t = t
        self.state = state
        super().__init__(message)


class PreconditionError(ToleranceKitError):
    """A standing assumption (A1, A2, A3) or an operation precondition failed."""

    exit_code = 6

    def __init__(self, assumption: str, message: str):
        self.assumption = assumption
        super().__init__(f"[{assumption}] {message}")


class EstimateError(ToleranceKitError):
    exit_code = 7
