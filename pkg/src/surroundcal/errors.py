"""Exception hierarchy shared by every solver and codec."""


class CalibrationError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateGeometry(CalibrationError):
    pass


class DegenerateDirections(DegenerateGeometry):
    pass


class RankDeficientNormals(DegenerateGeometry):
    pass


class BehindCamera(CalibrationError):
    pass


class NoConvergence(CalibrationError):
    """Iterative solver hit its budget.

    ``result`` carries the best state reached so far, when one exists.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NumericalFailure(CalibrationError):
    pass


class InsufficientViews(CalibrationError):
    pass


class DisconnectedGraph(CalibrationError):
    """The pose graph splits into several components.

    ``components`` lists each component as a sorted tuple of camera ids
    (boards are left out, the operator acts on cameras).
    """

    def __init__(self, message, components=()):
        super().__init__(message)
        self.components = [tuple(c) for c in components]

    @property
    def isolated_cameras(self):
        if not self.components:
            return []
        largest = max(self.components, key=len)
        return sorted(c for comp in self.components if comp is not largest for c in comp)


class NoConsensus(CalibrationError):
    pass


class FrameMismatch(CalibrationError):
    pass


class NonMonotonicTimestamps(CalibrationError):
    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class EmptyStream(CalibrationError):
    pass


class ParseError(CalibrationError):
    def __init__(self, message, path=None, line=None, field=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field {field!r}")
        super().__init__(f"{': '.join(loc)}: {message}" if loc else message)
        self.path = path
        self.line = line
        self.field = field


class IoFailure(CalibrationError):
    pass
