"""Exception types raised across the package."""


class SparseCNNError(Exception):
    """Base class for every error raised by sparsecnn."""


class ShapeError(SparseCNNError, ValueError):
    pass


class InvalidBlockError(SparseCNNError, ValueError):
    pass


class NonFiniteError(SparseCNNError, FloatingPointError):
    pass


class DivergenceError(SparseCNNError):
    """Training loss became non-finite.

    ``state`` holds the last state whose loss was still finite.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class CheckpointError(SparseCNNError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class HeaderMismatchError(CheckpointError):
    pass


class DataFormatError(SparseCNNError, ValueError):
    pass


class CountMismatchError(DataFormatError):
    pass


class ConfigError(SparseCNNError, ValueError):
    pass


class DegenerateSampleError(SparseCNNError, ValueError):
    pass
