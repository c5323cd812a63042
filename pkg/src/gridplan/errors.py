"""Exception hierarchy.

The CLI maps these onto exit codes: ``DomainError`` subclasses exit 2,
``CodecError`` and ``OSError`` exit 3, ``UsageError`` exits 1.
"""


class GridplanError(Exception):
    """Base class for all package errors."""


class UsageError(GridplanError):
    pass


class DomainError(GridplanError, ValueError):
    """Input outside an operation's domain."""


class InsufficientLengthError(DomainError):
    def __init__(self, available, required):
        self.available = float(available)
        self.required = float(required)
        super().__init__(
            f"polyline arc length {self.available:.3f} m < required {self.required:.3f} m")


class NoRouteError(DomainError):
    pass


class OffRouteError(DomainError):
    def __init__(self, distance, max_dist):
        self.distance = float(distance)
        self.max_dist = float(max_dist)
        super().__init__(
            f"nearest route node is {self.distance:.2f} m away (limit {self.max_dist:.2f} m)")


class DegenerateRouteError(DomainError):
    pass


class InfiniteKLError(DomainError):
    pass


class OsmParseError(GridplanError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class OsmStructureError(DomainError):
    def __init__(self, way_id, missing):
        self.way_id = way_id
        self.missing = missing
        super().__init__(f"way {way_id} references unknown node {missing}")


class CodecError(GridplanError):
    """Corrupt, truncated or version-mismatched binary container."""


class PublishedImportError(GridplanError):
    pass


class TrainingError(GridplanError):
    pass
