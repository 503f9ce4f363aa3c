class BitSNNError(Exception):
    """Base class for all package errors."""


class InvalidArgument(BitSNNError, ValueError):
    pass


class FormatError(BitSNNError):
    """Malformed dataset or checkpoint file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(BitSNNError):
    pass


class VersionError(BitSNNError):
    pass


class ChecksumError(BitSNNError):
    pass


class DivergenceError(BitSNNError, FloatingPointError):
    pass
