"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or mismatched dimensions.

    ``field`` names the offending config key or argument when known.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DataFormatError(ValueError):
    """A dataset, anchor or checkpoint file could not be decoded."""


class NonFiniteError(RuntimeError):
    """A loss or gradient became NaN/Inf during training."""
