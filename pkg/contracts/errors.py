"""
contracts/errors.py
===================
Error taxonomy shared by every pipeline stage.

Every error raised on purpose by this repository is a DKAError carrying a
numeric code (see ErrorCodes) and a details dict, so the batch driver can
record failures per question without losing their cause.

Code ranges:
    1000-1099: configuration and input data
    1100-1199: backend / wire protocol
    1200-1299: ranking and ensembling
    1300-1399: evaluation
"""

from typing import Any


class ErrorCodes:
    """Numeric error codes."""

    # Configuration and input data
    CONFIG_INVALID = 1000
    DATASET_INVALID = 1010
    INVALID_INPUT = 1020

    # Backend errors
    BACKEND_ERROR = 1100
    TRANSPORT_FAILED = 1101
    MALFORMED_RESPONSE = 1102
    LOGPROBS_MISSING = 1103
    IMAGE_NOT_FOUND = 1104
    DIMENSION_MISMATCH = 1105
    FIXTURE_MISS = 1106
    BACKEND_LOAD_FAILED = 1107

    # Ranking / ensemble
    VECTOR_INVALID = 1200
    INDEX_EMPTY = 1201
    ENSEMBLE_EMPTY = 1210

    # Evaluation
    EVALUATION_INVALID = 1300
    COVERAGE_FAILED = 1301


class DKAError(Exception):
    """Base class for all pipeline errors."""

    code: int = ErrorCodes.BACKEND_ERROR

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.message = message
        self.details: dict[str, Any] = details

    def to_dict(self) -> dict[str, Any]:
        """Serialize for audit records."""
        result: dict[str, Any] = {
            "code": self.code,
            "type": type(self).__name__,
            "message": self.message,
        }
        if self.details:
            result["details"] = self.details
        return result


# ============================================
# CONFIGURATION / INPUT
# ============================================


class ConfigError(DKAError):
    """Invalid or incomplete pipeline configuration."""

    code = ErrorCodes.CONFIG_INVALID

    def __init__(self, message: str, key_path: str | None = None, **details: Any) -> None:
        super().__init__(message, key_path=key_path, **details)
        self.key_path = key_path


class DatasetError(DKAError):
    """Malformed dataset, annotation or example-index file."""

    code = ErrorCodes.DATASET_INVALID


class InvalidInputError(DKAError, ValueError):
    """A precondition on an operation's input was violated."""

    code = ErrorCodes.INVALID_INPUT


# ============================================
# BACKENDS
# ============================================


class BackendError(DKAError):
    """Base class for backend failures."""

    code = ErrorCodes.BACKEND_ERROR


class TransportError(BackendError):
    """Connection, timeout or server-side failure. The only retryable error."""

    code = ErrorCodes.TRANSPORT_FAILED


class MalformedResponseError(BackendError):
    """The backend answered, but not in the expected wire shape."""

    code = ErrorCodes.MALFORMED_RESPONSE


class MissingLogprobsError(MalformedResponseError):
    """Log-probabilities were requested but the backend returned none."""

    code = ErrorCodes.LOGPROBS_MISSING


class ImageNotFoundError(BackendError):
    """The image reference cannot be resolved by the backend."""

    code = ErrorCodes.IMAGE_NOT_FOUND

    def __init__(self, image_ref: str) -> None:
        super().__init__(f"Image not found: {image_ref}", image_ref=image_ref)
        self.image_ref = image_ref


class DimensionMismatchError(BackendError):
    """An embedding does not have the backend's declared dimension."""

    code = ErrorCodes.DIMENSION_MISMATCH


class FixtureMissError(BackendError):
    """The mock backend has no fixture answering a request."""

    code = ErrorCodes.FIXTURE_MISS


class BackendLoadError(BackendError):
    """A backend plugin could not be discovered, imported or initialized."""

    code = ErrorCodes.BACKEND_LOAD_FAILED


# ============================================
# RANKING / ENSEMBLE / EVALUATION
# ============================================


class VectorError(DKAError, ValueError):
    """Vectors of unequal length, or a zero vector, passed to cosine."""

    code = ErrorCodes.VECTOR_INVALID


class EmptyIndexError(DKAError, ValueError):
    """Example selection over an empty index."""

    code = ErrorCodes.INDEX_EMPTY


class EnsembleError(DKAError, ValueError):
    """Ensemble over an empty candidate list."""

    code = ErrorCodes.ENSEMBLE_EMPTY


class EvaluationError(DKAError, ValueError):
    """Accuracy requested against an empty gold list."""

    code = ErrorCodes.EVALUATION_INVALID


class CoverageError(DKAError):
    """Predictions cover too few of the annotated question ids."""

    code = ErrorCodes.COVERAGE_FAILED

    def __init__(self, message: str, missing_ids: list[str]) -> None:
        super().__init__(message, missing_ids=missing_ids)
        self.missing_ids = missing_ids
