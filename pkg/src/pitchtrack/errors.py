class PitchTrackError(Exception):
    """Base class for all errors raised by this package."""


class InputError(PitchTrackError, ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(PitchTrackError, ValueError):
    """Invalid configuration (bad parameter, dimension mismatch)."""


class NumericalError(PitchTrackError, ArithmeticError):
    """A numerical routine could not proceed (e.g. singular covariance)."""
