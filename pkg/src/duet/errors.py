"""Exception types shared across the toolkit.

Every error carries a short machine-readable ``code`` (stable strings, used in
CLI error JSON) and an ``exit_code`` for the command-line surface.
"""


class DuetError(Exception):
    code = "error"
    exit_code = 1


class ConfigError(DuetError):
    code = "config"
    exit_code = 2


class DataError(DuetError):
    """Bad dataset content: manifest problems, mismatched pairs, invalid frames."""

    code = "data"
    exit_code = 5


class FileFormatError(DuetError):
    exit_code = 3


class BadMagicError(FileFormatError):
    code = "bad-magic"


class BadVersionError(FileFormatError):
    code = "bad-version"


class ChannelCountError(FileFormatError):
    code = "channel-mismatch"


class TruncatedPayloadError(FileFormatError):
    code = "truncated"


class NumericError(DuetError):
    code = "numeric"
    exit_code = 4


class ShapeError(NumericError):
    code = "shape"


class NumericInstabilityError(NumericError):
    code = "non-finite"


class NonFiniteGradientError(NumericError):
    code = "non-finite-gradient"


class DegenerateRotationError(NumericError):
    code = "degenerate-rotation"


class RegularizationTooSmallError(NumericError):
    code = "regularization-too-small"


class StaleTapeError(DuetError):
    code = "stale-tape"
