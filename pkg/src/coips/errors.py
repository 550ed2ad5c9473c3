"""Exception hierarchy shared by every stage of the pipeline."""


class CoipsError(Exception):
    """Base class for all library errors."""


class DimensionError(CoipsError):
    """Operand shapes are incompatible."""


class GeometryError(CoipsError):
    """Spatial sizes do not tile the requested window/stride/kernel."""


class NumericError(CoipsError):
    """A NaN or infinity appeared in tensor data."""


class ContractError(CoipsError):
    """A call violated an API precondition (e.g. backward on a non-scalar)."""


class InternalError(CoipsError):
    pass


class RangeError(CoipsError):
    pass


class ConfigError(CoipsError):
    """Invalid configuration, network spec, or training setup."""


class DecodeError(CoipsError):
    def __init__(self, message: str, source_id: str = ""):
        super().__init__(f"{source_id}: {message}" if source_id else message)
        self.source_id = source_id


class UndefinedMetricError(CoipsError):
    """Metric denominator is zero or the input has no usable samples."""


class CheckpointError(CoipsError):
    pass
