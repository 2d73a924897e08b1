"""Error taxonomy shared by the library, the service and the CLI.

ConfigError  -> bad inputs or invalid configuration (CLI exit 2, HTTP 400)
NumericError -> NaN/Inf or a numerically impossible request (CLI exit 3, HTTP 500)
I/O problems use the builtin OSError family (CLI exit 4).
"""


class ConfigError(ValueError):
    """Invalid configuration, arguments or file contents."""


class NumericError(RuntimeError):
    """Non-finite values or a numerically infeasible operation."""


class GroomFormatError(ConfigError):
    """Malformed groom file (bad magic, truncation, version, shape mismatch)."""


class BvhParseError(ConfigError):
    """Malformed BVH text; message carries a line number where possible."""


class CheckpointError(ConfigError):
    """Malformed checkpoint file or incompatible manifest."""
