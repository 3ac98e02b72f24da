class GridcapError(Exception):
    """Base class for every error raised by this package."""


class ParseError(GridcapError):
    pass


class ValidationError(GridcapError):
    def __init__(self, message, entity=None):
        super().__init__(message)
        self.entity = entity


class NonConvergence(GridcapError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class CollapseDetected(GridcapError):
    """Voltage fell below the collapse threshold while sweeping."""

    def __init__(self, message, node=None, magnitude=None):
        super().__init__(message)
        self.node = node
        self.magnitude = magnitude


class DegeneratePositiveSequence(GridcapError):
    pass


class NumericalBreakdown(GridcapError):
    def __init__(self, message, pivots=0):
        super().__init__(message)
        self.pivots = pivots


class ModelError(GridcapError):
    pass


class ExtractionError(GridcapError):
    pass


class NoProgress(GridcapError):
    pass
