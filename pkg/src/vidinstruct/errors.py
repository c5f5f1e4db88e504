"""Exception types shared across the package."""


class VidinstructError(Exception):
    """Base class for all package errors."""


class ShapeError(VidinstructError, ValueError):
    """Array dimensions violate an operation's contract."""


class ValidationError(VidinstructError, ValueError):
    """An input value violates a type invariant or precondition."""


class ConfigError(VidinstructError, ValueError):
    """Configuration value outside its allowed range or missing."""


class IngestError(VidinstructError):
    """Frame ingestion failed."""


class MissingPathError(IngestError):
    """Input path does not exist."""


class DecodeError(IngestError):
    """A frame file or video container could not be decoded."""


class MixedDimensionsError(IngestError):
    """Frames in one batch do not share height/width."""


class ServiceError(VidinstructError):
    """A model-service call failed."""

    def __init__(self, message, *, status=None, body=None):
        super().__init__(message)
        self.status = status
        self.body = body


class RetryExhaustedError(ServiceError):
    """All retry attempts for a service call failed."""


class PayloadError(ServiceError):
    """Service returned a payload violating the documented schema."""


class PipelineWiringError(VidinstructError):
    """Pipeline stages were composed with inconsistent inputs."""


class ParseError(VidinstructError):
    """LLM output could not be parsed into the expected structure."""

    def __init__(self, message, *, raw=None):
        super().__init__(message)
        self.raw = raw


class GenerationError(VidinstructError):
    """Instruction-pair generation produced nothing usable."""


class JudgeProtocolError(VidinstructError):
    """Judge reply unusable after the single allowed re-ask."""

    def __init__(self, message, *, raw=None):
        super().__init__(message)
        self.raw = raw


class EvaluationError(VidinstructError):
    """Evaluation run cannot produce a report."""


class StoreError(VidinstructError):
    """Annotation store failure."""


class NotFoundError(StoreError):
    """Requested record does not exist."""


class ImmutableTaskError(StoreError):
    """Write attempted against a task in a terminal state."""


class StatusTransitionError(StoreError):
    """Requested status change violates open -> submitted -> approved."""
