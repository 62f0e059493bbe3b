"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: FormatError -> 3, ShapeError and
ConfigError -> 4, CheckError -> 5 (usage errors exit 2 via argparse).
"""


class Rs3Error(Exception):
    """Base class for all package errors."""


class ShapeError(Rs3Error):
    """Tensor shape or dimension mismatch."""


class FormatError(Rs3Error):
    """Malformed file content: bad magic, bad header, truncated payload."""


class ConfigError(Rs3Error):
    """Invalid model or run configuration."""


class WeightMismatchError(ConfigError):
    """Archive names do not match the model parameter set."""


class CheckError(Rs3Error):
    """A self-check or runtime invariant failed."""
