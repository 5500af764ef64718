"""
contracts/__init__.py
=====================
Public API for backend contracts and domain types.
"""

from .base import BackendBase, BackendManifest, BackendStatus, HealthStatus, canonical_json
from .caption_contract import CaptionContract
from .domain import (
    Ablation,
    Caption,
    IcExample,
    KnowledgeItem,
    KnowledgeSource,
    QuestionInstance,
    ScoredAnswer,
    SelectorStrategy,
    SubQuestionOrigin,
    SubQuestionPair,
)
from .embedding_contract import EmbeddingContract, EmbeddingResponse
from .errors import DKAError, ErrorCodes
from .generation_contract import (
    GenerationContract,
    GenerationRequest,
    GenerationResponse,
    Message,
    MessageRole,
)

__all__ = [
    # Base
    "BackendBase",
    "BackendManifest",
    "BackendStatus",
    "HealthStatus",
    "canonical_json",
    # Capabilities
    "GenerationContract",
    "GenerationRequest",
    "GenerationResponse",
    "Message",
    "MessageRole",
    "CaptionContract",
    "EmbeddingContract",
    "EmbeddingResponse",
    # Domain
    "Ablation",
    "Caption",
    "IcExample",
    "KnowledgeItem",
    "KnowledgeSource",
    "QuestionInstance",
    "ScoredAnswer",
    "SelectorStrategy",
    "SubQuestionOrigin",
    "SubQuestionPair",
    # Errors
    "DKAError",
    "ErrorCodes",
]
