"""Exception hierarchy shared across the toolkit."""


class LaneForgeError(Exception):
    """Base class for all toolkit errors."""


class EmptyLane(LaneForgeError):
    """A lane operation received zero points."""


class DegenerateLane(LaneForgeError):
    """A lane has too few points for the requested operation."""


class RankDeficient(LaneForgeError):
    """Polynomial fit has fewer distinct abscissae than coefficients."""


class InvalidConfig(LaneForgeError):
    """A configuration value violates its documented invariant."""


class InsufficientPoints(LaneForgeError):
    """Too few candidate points for a geometric fit."""


class DegenerateNeighborhood(LaneForgeError):
    """Neighborhood points are collinear; no unique plane exists."""


class ShapeMismatch(LaneForgeError):
    """Matrix operands have incompatible shapes."""


class EmptyVoxelSet(LaneForgeError):
    """A voxel query was issued against an empty voxel set."""


class EmptySet(LaneForgeError):
    """A set metric received an empty point set."""


class BadMagic(LaneForgeError):
    """Cloud file does not start with the expected magic bytes."""


class TruncatedFile(LaneForgeError):
    """Cloud file is shorter than its header declares."""


class VersionUnsupported(LaneForgeError):
    """Cloud file declares a format version this reader does not know."""


class SchemaViolation(LaneForgeError):
    """A JSON document does not conform to its schema.

    ``path`` holds a JSON-path style locator of the offending element.
    """

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path
