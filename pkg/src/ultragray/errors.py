"""Exception hierarchy shared by all modules."""


class UltraGRayError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(UltraGRayError, ValueError):
    pass


class ContractError(UltraGRayError, ValueError):
    """A caller violated a documented precondition (shape mismatch, missing buffers)."""


class PoseError(UltraGRayError, ValueError):
    pass


class ValidationError(UltraGRayError, ValueError):
    pass


class NumericFaultError(UltraGRayError, FloatingPointError):
    pass


class UnsupportedFormatError(UltraGRayError):
    pass


class CorruptFileError(UltraGRayError):
    pass
