"""Exception types shared across the package."""


class ScaAecError(Exception):
    """Base class for package errors."""


class ConfigError(ScaAecError, ValueError):
    """Invalid configuration or unusable option combination."""


class DataError(ScaAecError, ValueError):
    """Bad or inconsistent input data (files, manifests, signals)."""


class NumericalError(ScaAecError, ArithmeticError):
    """Non-finite values or a numerically failed computation."""


class GraphError(ScaAecError, RuntimeError):
    """Misuse of an autodiff graph (reuse, non-scalar loss, ...)."""
