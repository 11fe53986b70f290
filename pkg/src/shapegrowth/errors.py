"""Exception and warning types raised across the package."""


class ShapeGrowthError(Exception):
    """Base class for all package errors."""


class ParseError(ShapeGrowthError):
    """A mesh or config file could not be parsed."""


class TopologyError(ShapeGrowthError):
    """Mesh connectivity is invalid for the requested operation."""


class TopologyMismatch(TopologyError):
    """Meshes expected to share connectivity do not."""


class MeshIOError(ShapeGrowthError, OSError):
    """A mesh file could not be written or read from disk."""


class DegenerateGeometry(ShapeGrowthError):
    """A geometric construction has no well-defined result."""


class InvalidParams(ShapeGrowthError, ValueError):
    pass


class InvalidSpec(ShapeGrowthError, ValueError):
    pass


class IntervalTooShort(ShapeGrowthError, ValueError):
    """Follow-up interval shorter than the 6 month inclusion rule."""


class SingularSystem(ShapeGrowthError, ArithmeticError):
    pass


class ProjectionFailure(ShapeGrowthError):
    pass


class DimensionMismatch(ShapeGrowthError, ValueError):
    pass


class DegenerateData(ShapeGrowthError):
    pass


class ConstantResponse(ShapeGrowthError, ValueError):
    pass


class RankDeficient(ShapeGrowthError):
    pass


class UnknownFeature(ShapeGrowthError, KeyError):
    pass


class UnknownMode(ShapeGrowthError, KeyError):
    pass


class ConfigError(ShapeGrowthError):
    pass


class StageDependencyError(ShapeGrowthError):
    pass


class StageFailure(ShapeGrowthError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class MissingArtifact(ShapeGrowthError, FileNotFoundError):
    pass


class OutOfRangeWarning(UserWarning):
    """A mode coefficient exceeds the configured standard-deviation bound."""


class DegenerateFeatureWarning(UserWarning):
    """A predictor is constant, its F-test score is reported as zero."""
