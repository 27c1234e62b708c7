"""Exception types raised across the package."""


class RadialCanonError(Exception):
    """Base class for all package errors."""


class NonSquareImage(RadialCanonError):
    pass


class SizeMismatch(RadialCanonError):
    pass


class ShapeMismatch(RadialCanonError):
    pass


class BeamBoundExceeded(RadialCanonError):
    pass


class MaskOutOfGrid(RadialCanonError):
    pass


class DomainError(RadialCanonError, ValueError):
    pass


class NotInSubgroup(RadialCanonError, ValueError):
    pass


class DegenerateDistribution(RadialCanonError, ValueError):
    pass


class NonFiniteActivation(RadialCanonError):
    pass


class NonFiniteLoss(RadialCanonError):
    pass


class GradCheckFailure(RadialCanonError, AssertionError):
    pass


class EmptyDataset(RadialCanonError):
    pass


class MixedSizes(RadialCanonError):
    pass


class UnreadableFile(RadialCanonError):
    pass


class ConfigError(RadialCanonError, ValueError):
    pass


class FormatError(RadialCanonError, ValueError):
    pass
