"""Exception types raised across the package."""


class TrajroadError(Exception):
    """Base class for all package errors."""


class MalformedRow(TrajroadError, ValueError):
    def __init__(self, line, reason=""):
        self.line = line
        super().__init__(f"line {line}: malformed row{': ' + reason if reason else ''}")


class RangeError(TrajroadError, ValueError):
    def __init__(self, line, reason=""):
        self.line = line
        super().__init__(f"line {line}: value out of range{': ' + reason if reason else ''}")


class InvalidCellSize(TrajroadError, ValueError):
    pass


class InvalidBounds(TrajroadError, ValueError):
    pass


class SampleOutOfBounds(TrajroadError, ValueError):
    pass


class ShapeMismatch(TrajroadError, ValueError):
    pass


class InvalidGrid(TrajroadError, ValueError):
    pass


class NotScalar(TrajroadError, ValueError):
    pass


class ConfigError(TrajroadError, ValueError):
    pass


class CorruptCheckpoint(TrajroadError, ValueError):
    pass


class CorruptRaster(TrajroadError, ValueError):
    pass


class EmptyDataset(TrajroadError, ValueError):
    pass


class EmptyInput(TrajroadError, ValueError):
    pass


class NonSquare(TrajroadError, ValueError):
    pass
