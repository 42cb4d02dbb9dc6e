"""Exception types raised across the package."""


class BevLiftError(Exception):
    """Base class for all errors raised by bevlift."""


class NonPositiveDepth(BevLiftError, ValueError):
    pass


class BehindCamera(BevLiftError, ValueError):
    pass


class DegenerateOrientation(BevLiftError, ValueError):
    pass


class HorizonRay(BevLiftError, ValueError):
    """The pixel ray is at or above the horizon and never meets a height plane below the camera."""


class AboveCamera(BevLiftError, ValueError):
    """The requested height is not below the camera."""


class InvalidSpec(BevLiftError, ValueError):
    pass


class IndexOutOfRange(BevLiftError, IndexError):
    pass


class ShapeMismatch(BevLiftError, ValueError):
    pass


class SpecMismatch(BevLiftError, ValueError):
    pass


class NoVisibleObjects(BevLiftError, ValueError):
    pass


class ParseError(BevLiftError, ValueError):
    pass


class EmptyCloud(BevLiftError, ValueError):
    pass


class ContainerError(BevLiftError, ValueError):
    pass


class ConfigError(BevLiftError, ValueError):
    pass
