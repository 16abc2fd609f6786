"""Exception types shared across the package."""


class BelowHorizon(ValueError):
    """A direction fell outside the upper hemisphere of its shading frame."""


class DegenerateHalfVector(ValueError):
    """Half-vector configuration too close to grazing for the PDF transform."""


class InsufficientSamples(ValueError):
    """An estimator diagnostic needs more samples than were provided."""


class DimensionMismatch(ValueError):
    """Array/image shapes are incompatible."""


class SceneParseError(ValueError):
    """Scene file is syntactically malformed."""


class SceneValidationError(ValueError):
    """Scene file parsed but violates a semantic constraint."""


class CheckpointVersionError(RuntimeError):
    """Checkpoint format version does not match this build."""


class NumericFailure(RuntimeError):
    """A NaN/Inf appeared in a training loss; aborts with a diagnostic dump."""
