"""Exception types raised across the package."""


class SpectralAdaptError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(SpectralAdaptError, ValueError):
    pass


class DimensionMismatch(SpectralAdaptError, ValueError):
    pass


class PartitionEmpty(SpectralAdaptError, ValueError):
    pass


class IndexOutOfRange(SpectralAdaptError, IndexError):
    pass


class InvalidRange(SpectralAdaptError, ValueError):
    pass


class InvalidBlockSize(SpectralAdaptError, ValueError):
    pass


class EmptyInput(SpectralAdaptError, ValueError):
    pass


class InsufficientRows(SpectralAdaptError, ValueError):
    pass


class RankDeficient(SpectralAdaptError, ValueError):
    pass


class ImageTooSmall(SpectralAdaptError, ValueError):
    pass


class CacheMismatch(SpectralAdaptError, ValueError):
    pass


class InvalidWindow(SpectralAdaptError, ValueError):
    pass


class NonFiniteLoss(SpectralAdaptError, FloatingPointError):
    """Training produced a NaN/Inf loss; ``dump`` holds the offending breakdown."""

    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump or {}


class FormatError(SpectralAdaptError, ValueError):
    """A file did not parse as the expected binary or text format."""


class ManifestError(SpectralAdaptError, ValueError):
    pass
