"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage errors exit 1, DataError
exits 2, NumericalError exits 3.
"""


class DataError(Exception):
    """Malformed, truncated, or inconsistent input data."""


class NumericalError(Exception):
    """A numerical routine failed beyond recoverable regularization."""
