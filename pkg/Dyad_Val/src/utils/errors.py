"""Exception types raised across the dyad validation pipeline."""


class DyadValidationError(Exception):
    """Base class for all pipeline errors."""


class InvalidArgumentError(DyadValidationError, ValueError):
    """An argument is outside its documented domain."""


class VignetteSchemaError(DyadValidationError, ValueError):
    """The vignette library file is malformed or incomplete."""


class VignetteLookupError(DyadValidationError, KeyError):
    """No vignette (or profile entry) covers the requested condition."""

    def __str__(self):
        return str(self.args[0]) if self.args else ''


class TemplateRenderError(DyadValidationError, ValueError):
    """A prompt template still holds an unresolved placeholder."""


class TransportError(DyadValidationError):
    """A provider call failed after the retry budget was exhausted."""

    def __init__(self, message, last_status=None, attempts=0):
        super().__init__(message)
        self.last_status = last_status
        self.attempts = attempts


class TransientProviderError(DyadValidationError):
    """Retryable provider failure (rate limit, timeout, 5xx)."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class CredentialError(DyadValidationError):
    """Provider credentials are missing or rejected. Never retried."""

    def __init__(self, message, env_var=None):
        super().__init__(message)
        self.env_var = env_var


class ResponseParseError(DyadValidationError, ValueError):
    """An agent response is missing a mandatory labeled field."""


class RatingRangeError(ResponseParseError):
    """A parsed satisfaction rating lies outside 1-7."""


class DataError(DyadValidationError, ValueError):
    """A record violates a data invariant."""

    def __init__(self, message, field=None, row=None):
        super().__init__(message)
        self.field = field
        self.row = row


class DatasetSchemaError(DyadValidationError, ValueError):
    """A dataset file does not match the expected schema version."""

    def __init__(self, message, schema_version=None, row=None):
        super().__init__(message)
        self.schema_version = schema_version
        self.row = row


class DegenerateVarianceError(DyadValidationError, ValueError):
    """A group has zero variance where a test needs a positive one."""


class DegenerateMarginError(DyadValidationError, ValueError):
    """The pooled SD is zero so no equivalence margin exists."""


class CollinearityError(DyadValidationError, ValueError):
    """The design matrix is rank deficient."""

    def __init__(self, message, columns=None):
        super().__init__(message)
        self.columns = list(columns or [])


class CodingError(DyadValidationError, ValueError):
    """A factor level has no numeric code."""


class BootstrapAbortError(DyadValidationError):
    """Too many bootstrap resamples were rank deficient."""


class StageDependencyError(DyadValidationError):
    """A pipeline stage was requested before the stage producing its input."""


class ConfigMismatchError(DyadValidationError):
    """A journal was written under a different configuration."""

    def __init__(self, message, diff=None):
        super().__init__(message)
        self.diff = list(diff or [])
