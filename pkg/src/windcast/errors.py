"""Exception hierarchy and the CLI exit-code contract."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class WindcastError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(WindcastError):
    """Invalid configuration: unknown keys, out-of-range values, missing paths."""

    exit_code = EXIT_CONFIG


class DataError(WindcastError):
    """Malformed or inconsistent input data."""

    exit_code = EXIT_DATA


class NumericError(WindcastError):
    """Numerical failure: rank-deficient designs, non-PSD matrices, infeasible moments."""

    exit_code = EXIT_NUMERIC
