"""Exception hierarchy shared by every part of the engine."""


class OomSvdError(Exception):
    """Base class for all engine errors."""

    category = "error"


class ShapeError(OomSvdError, ValueError):
    category = "shape"


class DegenerateInputError(OomSvdError, ValueError):
    category = "degenerate"


class ConfigError(OomSvdError, ValueError):
    category = "config"


class NumericError(OomSvdError, ArithmeticError):
    category = "numeric"


class CapacityError(OomSvdError, MemoryError):
    """Device tier cannot hold what was asked of it."""

    category = "capacity"


class DegreeTwoError(CapacityError):
    """Neither the input nor its co-factors fit on the device (unsupported)."""

    category = "degree2"


class LeaseError(OomSvdError, RuntimeError):
    category = "lease"


class StoreError(OomSvdError, KeyError):
    category = "store"


class CollectiveError(OomSvdError, RuntimeError):
    category = "collective"


class CollectiveTimeout(CollectiveError, TimeoutError):
    category = "timeout"
