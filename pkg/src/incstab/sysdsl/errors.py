"""Exceptions raised while parsing and evaluating system definitions."""


class DslError(Exception):
    """Base class for all system-definition errors."""


class ParseError(DslError):
    """Syntax or name-resolution error at a byte offset of the source."""

    def __init__(self, message: str, offset: int, source: str = ""):
        self.message = message
        self.offset = offset
        self.source = source
        super().__init__(f"{message} (at offset {offset})")


class EvalDomainError(DslError, ArithmeticError):
    """An expression was evaluated outside the domain of one of its operations."""

    def __init__(self, message: str, offset: int = -1):
        self.message = message
        self.offset = offset
        where = f" (node at offset {offset})" if offset >= 0 else ""
        super().__init__(message + where)


class SystemFileError(DslError):
    """Malformed or inconsistent system file."""

    def __init__(self, message: str, line: int | None = None):
        self.message = message
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
