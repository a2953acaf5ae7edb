"""Exception hierarchy shared across the package."""


class HierGPError(Exception):
    """Base class for all package errors."""


class DomainError(HierGPError, ValueError):
    """An argument lies outside the domain of an operation."""


class NumericalError(HierGPError, ArithmeticError):
    """A linear-algebra or floating-point failure (e.g. Cholesky breakdown)."""


class InitializationError(HierGPError):
    """The sampler could not find a finite starting point."""


class ConfigError(HierGPError):
    """A run configuration or input file is inconsistent."""


class ParseError(HierGPError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
