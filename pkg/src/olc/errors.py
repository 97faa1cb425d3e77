"""Exception hierarchy shared by all codec modules."""


class OlcError(Exception):
    """Base class for codec errors."""


class PlyError(OlcError):
    """PLY parse failure."""


class MalformedHeaderError(PlyError):
    pass


class MissingCoordinateError(PlyError):
    pass


class EmptyCloudError(PlyError):
    pass


class DegenerateExtentError(OlcError, ValueError):
    """All points coincide, so no scale can be derived."""


class CorruptionError(OlcError):
    """Payload is truncated or does not match the probability model."""


class FormatError(OlcError):
    """Bad magic or unsupported container version."""


class ChecksumMismatchError(OlcError):
    """Bitstream was produced with different model weights."""


class RateRangeError(OlcError, ValueError):
    """Target rate lies outside the calibrated anchor range."""


class TrainingError(OlcError):
    pass
