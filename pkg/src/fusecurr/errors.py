"""Exception hierarchy shared by every module of the engine."""


class FusecurrError(Exception):
    """Base class for all engine errors."""


class ParseError(FusecurrError):
    pass


class DimensionError(FusecurrError, ValueError):
    pass


class IoError(FusecurrError, OSError):
    pass


class ShapeError(FusecurrError, ValueError):
    pass


class WeightError(FusecurrError, ValueError):
    pass


class StateError(FusecurrError, ValueError):
    pass


class TrajectoryError(FusecurrError, ValueError):
    pass


class DatasetError(FusecurrError):
    pass


class NumericsError(FusecurrError, ArithmeticError):
    pass


class ConfigError(FusecurrError, ValueError):
    pass
