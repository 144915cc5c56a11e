"""Exception hierarchy shared across the package."""


class TreelabError(Exception):
    """Base class for all treelab errors."""


class GeometryError(TreelabError):
    """Malformed box (min > max) or otherwise invalid geometry."""


class MaskError(TreelabError):
    """Malformed RLE mask: bad counts, dimension mismatch, bad string."""


class EmptyMaskError(MaskError):
    """Operation requires at least one foreground pixel."""


class AssignmentError(TreelabError):
    """Invalid assignment problem: empty inputs or non-finite costs."""


class InsufficientPointsError(TreelabError):
    """Too few points to estimate tree factors."""


class QueryError(TreelabError):
    """Invalid structured query (unknown column, bad operator, ...)."""


class NotFoundError(TreelabError):
    """Referenced project, session or artifact does not exist."""


class IngestError(TreelabError):
    """Malformed input file; message names the file and offending line."""


class ConfigurationError(TreelabError):
    """Invalid service configuration, e.g. remote call while offline."""


class ServiceError(TreelabError):
    """A remote service call failed after retries; cause attached."""


class AgentParseError(TreelabError):
    """LLM output did not follow the step grammar; carries raw output."""

    def __init__(self, message: str, raw_output: str = ""):
        super().__init__(message)
        self.raw_output = raw_output


class PlacementError(TreelabError):
    """Synthetic scene could not place the requested trees."""
