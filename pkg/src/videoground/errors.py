"""Exception hierarchy shared across the pipeline.

Backend transport failures are kept distinct from schema violations and
from ordinary pipeline errors so the CLI can map them to separate exit
codes (2 = pipeline failure, 3 = backend transport failure).
"""


class PipelineError(Exception):
    """Base class for failures raised by pipeline stages."""


class InvalidInputError(PipelineError, ValueError):
    """Input data violates a documented precondition (non-finite, empty, ...)."""


class ShapeError(PipelineError, ValueError):
    """Tensor or box dimensions do not line up."""


class IngestError(PipelineError):
    """Media could not be read or is internally inconsistent."""


class ConfigError(PipelineError):
    """Config file is malformed, has unknown keys, or out-of-range values."""


class CacheError(PipelineError):
    """Cache entry failed its digest check."""


class BackendError(PipelineError):
    """Base class for backend call failures."""


class BackendTransportError(BackendError):
    """Endpoint unreachable, timed out, or returned an HTTP error status.

    Retryable by contract; surfaces only after the retry budget is spent.
    """


class BackendSchemaError(BackendError):
    """Request or response payload failed schema validation."""
