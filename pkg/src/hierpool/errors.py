"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DatasetError(ValueError):
    """Missing, malformed or corrupted dataset files."""


class NumericalError(FloatingPointError):
    """Non-finite values during training or evaluation."""
