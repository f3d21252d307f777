"""
Error Hierarchy
Every error carries the process exit code the CLI reports for it
"""


class SceneCodingError(Exception):
    """Base error for the whole package"""
    exit_code = 2


# ============================================
# Usage errors (exit 1)
# ============================================

class UsageError(SceneCodingError):
    """Bad options, bad parameters or an unsupported request"""
    exit_code = 1


class InvalidParameterError(UsageError):
    """A parameter violates a module precondition"""


# ============================================
# Data errors (exit 2)
# ============================================

class DataError(SceneCodingError):
    """Input data that cannot be processed"""
    exit_code = 2


class GeometryError(DataError):
    """Degenerate image or rectangle outside the image"""


class DimensionMismatchError(DataError):
    """Vector or matrix dimensions that do not agree"""


class EmptyInputError(DataError):
    """An operation received no samples"""


class SingleClassError(DataError):
    """Classifier training data with fewer than two classes"""


class RankDeficientError(DataError):
    """Requested more principal components than the data rank allows"""

    def __init__(self, requested, rank):
        self.requested = requested
        self.rank = rank
        super().__init__(
            f"Requested {requested} components but the data has rank {rank}; "
            f"achievable output dims are 1..{rank}"
        )


class FeatureFileError(DataError):
    """Malformed binary or CSV feature file"""


class BadMagicError(FeatureFileError):
    """File does not start with the expected magic bytes"""


class TruncatedPayloadError(FeatureFileError):
    """Payload length disagrees with the header"""


class NonFiniteValueError(FeatureFileError):
    """NaN or infinite values found"""


class UnsupportedFormatError(FeatureFileError):
    """Unknown version or dtype code"""


class ManifestError(DataError):
    """Dataset manifest or split file is inconsistent"""


class ArtifactError(DataError):
    """Persisted artifact missing or unreadable"""


class FingerprintMismatchError(ArtifactError):
    """Artifacts were produced by a different configuration"""

    def __init__(self, expected, found, artifact=None):
        self.expected = expected
        self.found = found
        where = f" in {artifact}" if artifact else ""
        super().__init__(
            f"Config fingerprint {expected} does not match {found}{where}; "
            f"re-run train with this config"
        )


# ============================================
# Numerical failures (exit 3)
# ============================================

class NumericalError(SceneCodingError):
    """Non-finite objective or failed linear solve"""
    exit_code = 3


# ============================================
# Stage context
# ============================================

class StageError(SceneCodingError):
    """Wraps an error with the pipeline stage and sample that raised it"""

    def __init__(self, stage, cause, sample=None):
        self.stage = stage
        self.cause = cause
        self.sample = sample
        self.exit_code = getattr(cause, 'exit_code', 2)
        context = f" (sample {sample})" if sample is not None else ""
        super().__init__(f"[{stage}]{context} {cause}")
