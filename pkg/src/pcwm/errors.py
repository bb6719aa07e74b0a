"""Exception hierarchy.

Every failure raised by the library is a subclass of :class:`PcwmError`, so
callers (and the CLI) can separate data problems from programming errors.
"""


class PcwmError(Exception):
    """Base class for all library errors."""


class DataError(PcwmError, ValueError):
    """Input data is malformed or unsuitable for the requested operation."""


# -- geometry / file formats -------------------------------------------------

class ParseError(DataError):
    """A mesh or cloud file could not be parsed."""


class MalformedHeader(ParseError):
    pass


class CountMismatch(ParseError):
    pass


class IndexOutOfRange(ParseError):
    pass


class NonFiniteCoordinate(ParseError):
    pass


class UnsupportedEncoding(ParseError):
    pass


class MalformedRecord(ParseError):
    pass


class ZeroAreaMesh(DataError):
    pass


class DegenerateCloud(DataError):
    pass


class EmptyCloud(DataError):
    pass


# -- watermarking ------------------------------------------------------------

class NonNormalizedInput(DataError):
    pass


class TooFewPoints(DataError):
    pass


class EmbedNonConvergent(DataError):
    pass


class InvalidKey(DataError):
    pass


# -- attacks / metrics -------------------------------------------------------

class EmptyResult(DataError):
    pass


class InvalidAttack(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyScoreSet(DataError):
    pass


# -- neural decoder ----------------------------------------------------------

class ShapeMismatch(DataError):
    pass


class DivergedLoss(PcwmError):
    pass


class MalformedCheckpoint(DataError):
    pass


class CheckpointVersionError(MalformedCheckpoint):
    pass


class ConfigMismatch(DataError):
    pass


# -- harness -----------------------------------------------------------------

class EmptyDataset(DataError):
    pass


class OverlapDetected(DataError):
    pass


class EvaluationAborted(PcwmError):
    pass


class ConfigError(PcwmError, ValueError):
    """A run configuration failed validation (usage error, not data error)."""
