"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: validation/configuration
problems exit 2, storage problems exit 3, numeric failures exit 4.
"""


class PhasekitError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(PhasekitError, ValueError):
    """Invalid data passed to an operation (NaNs, bad shapes, bad ranges)."""


class ConfigurationError(PhasekitError, ValueError):
    """Inconsistent or unsupported configuration (grid size, strategy/dataset mismatch)."""


class StorageError(PhasekitError, OSError):
    """Dataset or checkpoint I/O failure."""


class CorruptCheckpointError(StorageError):
    """Checkpoint file is truncated, has a bad magic, or an unknown version."""


class NumericError(PhasekitError, RuntimeError):
    """A computation produced NaN/Inf where finite values are required."""
