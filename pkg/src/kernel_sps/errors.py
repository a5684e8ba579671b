"""Exception hierarchy shared by the library and the command-line front end."""


class KernelSPSError(Exception):
    """Base class for all library errors."""


class ConfigError(KernelSPSError, ValueError):
    """Invalid hyper-parameters or inconsistent configuration."""


class DataError(KernelSPSError, ValueError):
    """Malformed or inconsistent data (bad CSV rows, dimension mismatches)."""


class NumericalError(KernelSPSError, ArithmeticError):
    """A numerical precondition failed (strict positive definiteness, rank)."""


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped at ``max_iter`` before meeting its tolerance."""
