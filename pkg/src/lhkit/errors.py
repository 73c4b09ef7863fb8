"""Exception types raised across the toolkit."""


class LhkitError(Exception):
    """Base class for all lhkit errors."""


class DomainError(LhkitError):
    """Sweep-angle model evaluated outside its geometric domain."""


class DegenerateRay(LhkitError):
    """The two sweep planes do not intersect in a unique ray."""


class ParallelRays(LhkitError):
    """Rays are (numerically) parallel; no unique closest-point pair."""


class IncompleteEpoch(LhkitError):
    """An epoch is missing required sweep angles for triangulation."""


class MeasurementRejected(LhkitError):
    """Innovation exceeded the gating threshold."""


class InvalidAnchors(LhkitError):
    """Clock rescale anchors define a non-positive time span."""


class DegenerateGeometry(LhkitError):
    """Point pairs are collinear; rigid transform is not identifiable."""


class InsufficientOverlap(LhkitError):
    """Too few valid CF/mocap pairs to run the alignment search."""


class TooFewSamples(LhkitError):
    """Not enough records to compute the requested statistic."""


class EmptyDataset(LhkitError):
    """No records left after filtering."""


class ConfigError(LhkitError):
    """Malformed or incomplete scenario configuration."""


class FormatError(LhkitError):
    """Corrupt or malformed session file.

    Carries the byte offset at which the problem was detected.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(LhkitError):
    """Session file written by an unknown format version."""
