"""Exception hierarchy shared by every module of the package."""


class ArtifactError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(ArtifactError, ValueError):
    pass


class NonFiniteInputError(ArtifactError, ValueError):
    pass


class NotScalarError(ArtifactError, ValueError):
    pass


class DetachedGraphError(ArtifactError, RuntimeError):
    pass


class MissingGradError(ArtifactError, RuntimeError):
    pass


class ZeroIqrError(ArtifactError, ValueError):
    """A channel is constant, so it cannot be scaled by its IQR."""


class TooFewSamplesError(ArtifactError, ValueError):
    pass


class WindowTooLongError(ArtifactError, ValueError):
    pass


class EmptyInputError(ArtifactError, ValueError):
    pass


class LengthMismatchError(ArtifactError, ValueError):
    pass


class NonFiniteActivationError(ArtifactError, FloatingPointError):
    pass


class NonFiniteLossError(ArtifactError, FloatingPointError):
    pass


class DivergedLossError(ArtifactError, FloatingPointError):
    pass


class EmptyDatasetError(ArtifactError, ValueError):
    pass


class RecordingTooShortError(ArtifactError, ValueError):
    pass


class TooFewPointsError(ArtifactError, ValueError):
    pass


class DimensionMismatchError(ArtifactError, ValueError):
    pass


class SeriesTooShortError(ArtifactError, ValueError):
    pass


class SingularDesignError(ArtifactError, ValueError):
    pass


class TooFewRecordingsError(ArtifactError, ValueError):
    pass


class InvalidConfigError(ArtifactError, ValueError):
    pass


class PerplexityTooLargeError(ArtifactError, ValueError):
    pass


class BadConfigError(ArtifactError, ValueError):
    pass


class MissingInputError(ArtifactError, FileNotFoundError):
    pass


class FormatVersionMismatchError(ArtifactError, ValueError):
    pass
