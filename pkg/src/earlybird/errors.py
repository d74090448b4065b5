"""Exception types raised across the package.

Everything derives from :class:`EarlyBirdError`. Geometry and data problems
are additionally ``ValueError`` subclasses so generic callers can catch them.
"""


class EarlyBirdError(Exception):
    pass


class GeometryError(EarlyBirdError, ValueError):
    pass


class DegenerateQuad(GeometryError):
    pass


class SingularSystem(GeometryError):
    pass


class SingularMatrix(GeometryError):
    pass


class PointAtInfinity(GeometryError):
    pass


class ImageTooSmall(EarlyBirdError, ValueError):
    pass


class DataError(EarlyBirdError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class UnknownTag(ParseError):
    def __init__(self, line, tag):
        self.tag = tag
        super().__init__(line, f"unknown tag {tag!r}")


class MissingId(DataError):
    def __init__(self, frame_id):
        self.frame_id = frame_id
        super().__init__(f"missing id {frame_id}")


class UnknownId(DataError):
    def __init__(self, frame_id):
        self.frame_id = frame_id
        super().__init__(f"unknown id {frame_id}")


class DimensionMismatch(DataError):
    pass


class EmptyMatrix(DataError):
    pass


class NonPositiveDepth(GeometryError):
    pass


class CountMismatch(DataError):
    pass


class RayParallelToFloor(GeometryError):
    pass


class IntersectionBehindCamera(GeometryError):
    pass


class NoFloorVisible(GeometryError):
    pass


class DegenerateConfiguration(GeometryError):
    pass


class TooFewPoints(GeometryError):
    pass


class NonPlanarResidual(GeometryError):
    pass


class NotConnected(EarlyBirdError):
    pass


class SingularNormalEquations(EarlyBirdError):
    pass


class TooFewCommonIds(DataError):
    pass


class ConfigError(EarlyBirdError):
    def __init__(self, field, reason):
        self.field = field
        super().__init__(f"{field}: {reason}")


class MissingUpstreamArtifact(EarlyBirdError):
    def __init__(self, stage, path):
        self.stage = stage
        self.path = path
        super().__init__(f"stage {stage!r} needs {path}; run the upstream stage first")
