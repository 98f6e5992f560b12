class ConfigError(Exception):
    """Invalid or unreadable run configuration."""


class DataError(Exception):
    """Malformed or unusable market data."""
