"""
contracts/generation_contract.py
================================
Text generation contract: greedy decoding with per-token log-probabilities.

Extends: BackendBase

Used for question decomposition, knowledge elicitation and answering.
"""

from abc import abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .base import BackendBase
from .errors import InvalidInputError


class MessageRole(Enum):
    """Role of message sender in a chat-completions payload."""

    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Message:
    """A chat message as sent over the wire."""

    role: MessageRole
    content: str | list[dict[str, Any]]

    def to_dict(self) -> dict[str, Any]:
        return {"role": self.role.value, "content": self.content}


@dataclass(frozen=True)
class GenerationRequest:
    """
    One generation call.

    Attributes:
        prompt: Full prompt text, sent as a single user message
        max_tokens: Completion budget
        temperature: 0 means greedy; every pipeline call uses 0
        want_logprobs: Ask the backend for per-token log-probabilities
        stop_sequences: Generation stops before any of these
        model: Model id override (None = backend default)
    """

    prompt: str
    max_tokens: int
    temperature: float = 0.0
    want_logprobs: bool = False
    stop_sequences: tuple[str, ...] = field(default_factory=tuple)
    model: str | None = None

    def __post_init__(self) -> None:
        if not self.prompt:
            raise InvalidInputError("generation prompt must be non-empty")
        if self.max_tokens < 1:
            raise InvalidInputError("max_tokens must be positive")
        if self.temperature < 0:
            raise InvalidInputError("temperature must be non-negative")

    def to_canonical(self) -> dict[str, Any]:
        """Field map used for cache keys and fixture digests."""
        return {
            "kind": "generate",
            "prompt": self.prompt,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "want_logprobs": self.want_logprobs,
            "stop_sequences": list(self.stop_sequences),
            "model": self.model,
        }


@dataclass(frozen=True)
class GenerationResponse:
    """Generated text plus token log-probabilities (empty unless requested)."""

    text: str
    token_logprobs: tuple[float, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "token_logprobs": list(self.token_logprobs)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GenerationResponse":
        return cls(text=data["text"], token_logprobs=tuple(float(v) for v in data.get("token_logprobs", [])))


class GenerationContract(BackendBase):
    """
    Abstract contract for text generation backends.

    Example:
        class ChatCompletionsPlugin(GenerationContract):
            async def generate(self, request):
                payload = {"messages": [...], "temperature": request.temperature}
                ...
                return GenerationResponse(text=text, token_logprobs=logprobs)
    """

    @abstractmethod
    async def generate(self, request: GenerationRequest) -> GenerationResponse:
        """
        Generate a completion for the request's prompt.

        Raises:
            TransportError: Connection or server failure (retryable)
            MalformedResponseError: Response not in the expected shape
        """
