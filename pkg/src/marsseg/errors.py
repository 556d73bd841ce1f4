"""Exception hierarchy shared by every marsseg module."""


class MarsSegError(Exception):
    """Base class for all errors raised by marsseg."""


class DimensionError(MarsSegError, ValueError):
    """Tensor extents do not agree (channel counts, concat axes, matmul inner dims)."""


class GeometryError(MarsSegError, ValueError):
    """A spatial extent is too small or not divisible as required."""


class DegenerateVarianceError(MarsSegError, ValueError):
    """Batch statistics would be computed from a single value per channel."""


class ContractError(MarsSegError, ValueError):
    """A call violated an API precondition (e.g. backward on a non-scalar)."""


class SpecError(MarsSegError, ValueError):
    """A block or network specification is internally inconsistent."""


class UndefinedMeanError(MarsSegError, ValueError):
    """Every pixel was ignored, so a per-pixel mean has no value."""


class ManifestError(MarsSegError):
    """Dataset tree is malformed (orphan images or masks, missing class table)."""


class DataError(MarsSegError, ValueError):
    """Mask or image content is invalid (unknown class id, bad extents)."""


class ConfigError(MarsSegError, ValueError):
    """A configuration key or value is unknown or malformed."""


class StateError(MarsSegError, ValueError):
    """Optimizer state does not match the parameters it is applied to."""


class FormatError(MarsSegError):
    """Checkpoint header, version, or contents do not match expectations."""


class IntegrityError(FormatError):
    """Checkpoint is truncated or its checksum does not match."""


class NonFiniteLossError(MarsSegError, FloatingPointError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, message, epoch=None, batch=None, param_norms=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.param_norms = param_norms or {}
