"""Exception hierarchy shared by all stages."""


class ZeroSpeedError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ZeroSpeedError, ValueError):
    """Image is empty or too small for the requested operation."""


class ConfigError(ZeroSpeedError, ValueError):
    """Invalid configuration value or file."""


class InputError(ZeroSpeedError):
    """A frame or input directory could not be read."""


class SignalParseError(InputError):
    """Malformed speed-signal CSV row."""


class SequencingError(ZeroSpeedError):
    """Frames or tracker steps arrived out of order."""


class InsufficientMatchesError(ZeroSpeedError):
    """Too few correspondences to attempt geometric verification."""


class DegenerateGeometryError(ZeroSpeedError):
    """No model reached the required consensus."""


class AlignmentError(ZeroSpeedError, ValueError):
    """Predictions and ground truth do not cover the same frames."""
