"""Exception types shared across the package."""


class KprelError(Exception):
    """Base class for all package errors."""


class InputError(KprelError, ValueError):
    """A caller-supplied value violates an operation's contract."""


class DatasetError(KprelError, ValueError):
    """A dataset is untrainable (empty or single-class)."""


class TrainingError(KprelError, RuntimeError):
    """Training diverged (non-finite loss or weights)."""


class SchemaMismatchError(KprelError, ValueError):
    """A model's feature schema hash does not match this library."""


class ModelFormatError(KprelError, ValueError):
    """A serialized model payload is corrupt or has an unknown format."""


class CalibrationError(KprelError, ValueError):
    """Threshold calibration received an unusable click log."""


class UndefinedMetricError(KprelError, ValueError):
    """A metric's denominator is empty; the value is undefined."""


class SimConfigError(KprelError, ValueError):
    """Simulator configuration is out of range or infeasible."""


class SnapshotError(KprelError, ValueError):
    """A snapshot file is malformed or snapshots are incompatible."""


class JudgeBackendError(KprelError, RuntimeError):
    """The judge backend failed or returned a malformed response."""
