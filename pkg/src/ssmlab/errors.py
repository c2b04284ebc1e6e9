"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes or axes do not line up for the requested operation."""


class ContractError(RuntimeError):
    """A caller violated an operation's preconditions."""


class ConfigError(ValueError):
    """A configuration value or file is invalid."""


class NumericsError(RuntimeError):
    """Training or evaluation produced a non-finite value."""
