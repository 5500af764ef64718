"""
llm_chat/plugin.py
==================
Chat-completions generation backend with token log-probabilities.

Speaks the OpenAI-compatible /chat/completions contract: the prompt goes out
as a single user message, and when log-probabilities are requested the reply
must carry choices[0].logprobs.content[i].logprob for every generated token.
Self-hosted servers (vLLM, llama.cpp server, TGI) expose the same contract.

Dependencies:
    - contracts/generation_contract.py (GenerationContract)
    - plugins/_host/wire.py (JsonWireClient)
"""

import logging
from typing import Any

import httpx

from contracts.base import BackendStatus, HealthStatus
from contracts.errors import BackendLoadError, MalformedResponseError, MissingLogprobsError
from contracts.generation_contract import (
    GenerationContract,
    GenerationRequest,
    GenerationResponse,
    Message,
    MessageRole,
)
from plugins._host.wire import JsonWireClient

logger = logging.getLogger(__name__)

# Servers occasionally report log-probabilities a rounding error above zero
POSITIVE_LOGPROB_SLACK = 1e-6


def parse_chat_completion(body: dict[str, Any], want_logprobs: bool) -> GenerationResponse:
    """
    Extract text and token log-probabilities from a chat-completions body.

    Raises:
        MalformedResponseError: no choices, or a non-string message content
        MissingLogprobsError: log-probabilities requested but absent
    """
    choices = body.get("choices")
    if not isinstance(choices, list) or not choices:
        raise MalformedResponseError("chat completion has no choices")
    choice = choices[0]
    message = choice.get("message") or {}
    text = message.get("content")
    if text is None:
        text = ""
    if not isinstance(text, str):
        raise MalformedResponseError("chat completion content is not a string")

    if not want_logprobs:
        return GenerationResponse(text=text)

    logprobs_block = choice.get("logprobs") or {}
    entries = logprobs_block.get("content")
    if entries is not None:
        raw = [entry.get("logprob") for entry in entries]
    else:
        # legacy completions layout
        raw = logprobs_block.get("token_logprobs") or []

    if text and not raw:
        raise MissingLogprobsError("backend returned no token log-probabilities")

    values = []
    for value in raw:
        if not isinstance(value, (int, float)):
            raise MalformedResponseError(f"token log-probability is not a number: {value!r}")
        if value > POSITIVE_LOGPROB_SLACK:
            raise MalformedResponseError(f"token log-probability above zero: {value}")
        values.append(min(float(value), 0.0))
    return GenerationResponse(text=text, token_logprobs=tuple(values))


class ChatCompletionsPlugin(GenerationContract):
    """
    Generation backend for OpenAI-compatible chat-completions servers.

    Config:
        endpoint: Base URL, e.g. "http://localhost:8000/v1" (required)
        api_key: Bearer token (optional)
        model: Default model id
        timeout: Request timeout in seconds
    """

    def __init__(self) -> None:
        super().__init__()
        self._client: JsonWireClient | None = None
        self._endpoint: str = ""
        self._model: str = "gpt-3.5-turbo"

    async def initialize(self, config: dict[str, Any]) -> bool:
        endpoint = config.get("endpoint")
        if not endpoint:
            self._status = BackendStatus.ERROR
            raise BackendLoadError("llm_chat requires an endpoint", backend="llm_chat")
        self._endpoint = str(endpoint)
        self._model = str(config.get("model", self._model))
        transport: httpx.AsyncBaseTransport | None = config.get("transport")
        self._client = JsonWireClient(
            self._endpoint, api_key=config.get("api_key"), timeout=float(config.get("timeout", 60)), transport=transport
        )
        self._status = BackendStatus.READY
        return True

    async def shutdown(self) -> bool:
        if self._client is not None:
            await self._client.aclose()
            self._client = None
        self._status = BackendStatus.STOPPED
        return True

    def health_check(self) -> HealthStatus:
        details = {"endpoint": self._endpoint, "model": self._model}
        if self._status is BackendStatus.READY:
            return HealthStatus(status=BackendStatus.READY, message="chat-completions client ready", details=details)
        return HealthStatus(status=self._status, message="chat-completions client not initialized", details=details)

    @property
    def backend_id(self) -> str:
        return f"llm_chat:{self._model}@{self._endpoint}"

    def build_payload(self, request: GenerationRequest) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "model": request.model or self._model,
            "messages": [Message(MessageRole.USER, request.prompt).to_dict()],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.want_logprobs:
            payload["logprobs"] = True
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        return payload

    async def generate(self, request: GenerationRequest) -> GenerationResponse:
        if self._client is None:
            raise BackendLoadError("llm_chat used before initialize()", backend="llm_chat")
        body = await self._client.post_json("/chat/completions", self.build_payload(request))
        return parse_chat_completion(body, request.want_logprobs)


# Alias for the loader
Plugin = ChatCompletionsPlugin
