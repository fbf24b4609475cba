"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid or contradictory configuration."""


class UsageError(ValueError):
    """A call made with arguments or in a state the operation does not accept."""
