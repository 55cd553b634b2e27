class FlowFormatError(ValueError):
    """
    Raised when a flow or image byte stream cannot be decoded
    """


class BadMagicError(FlowFormatError):
    pass


class TruncatedDataError(FlowFormatError):
    pass


class UnsupportedFormatError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class LevelOutOfRangeError(ValueError):
    pass


class ImageTooSmallError(ValueError):
    pass


class RecordMismatchError(ValueError):
    """
    Raised when score records and the dataset they rank do not line up one-to-one
    """


class UnknownFixtureError(KeyError):
    pass


class GradientCheckError(RuntimeError):
    pass


class TableFormatError(ValueError):
    """
    Raised when a scores, metrics, curve or correlation CSV cannot be parsed
    """
