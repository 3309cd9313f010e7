"""Exception hierarchy shared by every pipeline stage."""


class ArticulateError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateInput(ArticulateError):
    """Point sets that cannot determine a transform (collinear or coincident)."""


class DegeneratePart(ArticulateError):
    """A part whose canonical extent collapses to a point."""


class DegenerateAxis(ArticulateError):
    """Camera-space joint axis is undefined for the given part rotations."""


class StateOutOfRange(ArticulateError):
    """A joint state lies outside its joint's motion range."""


class UnknownCategory(ArticulateError):
    """Requested procedural category does not exist."""


class ResampleLimitExceeded(ArticulateError):
    """Too many camera viewpoints were rejected while sampling a scene."""


class SchemaVersionMismatch(ArticulateError):
    """A file does not follow the expected schema or version."""


class LengthMismatch(ArticulateError):
    """Per-point arrays disagree with the scene point count."""


class EmptyPart(ArticulateError):
    """No point carries a given part label."""


class InsufficientVotes(ArticulateError):
    """A joint has too few associated points to aggregate its votes."""


class TooFewPoints(ArticulateError):
    """Fewer points than the minimal sample size."""


class SolverDiverged(ArticulateError):
    """Nonlinear refinement produced a non-finite energy.

    The initial estimate is attached as ``fallback`` so callers can keep it.
    """

    def __init__(self, message, fallback=None):
        super().__init__(message)
        self.fallback = fallback


class CountMismatch(ArticulateError):
    """Estimate and scene disagree on the number of parts or joints."""
