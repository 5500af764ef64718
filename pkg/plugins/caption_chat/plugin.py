"""
caption_chat/plugin.py
======================
Captioning backend over an OpenAI-compatible chat-completions endpoint.

A question-aware caption is one greedy completion for a user message holding
the prompt and the image. Local captions are n sampled completions of a fixed
region-description prompt; the hub removes duplicates.

Dependencies:
    - contracts/caption_contract.py (CaptionContract)
    - plugins/_host/wire.py (JsonWireClient, resolve_image)
"""

import logging
from typing import Any

import httpx

from contracts.base import BackendStatus, HealthStatus
from contracts.caption_contract import CaptionContract
from contracts.errors import BackendLoadError, MalformedResponseError
from contracts.generation_contract import Message, MessageRole
from plugins._host.wire import JsonWireClient, resolve_image

logger = logging.getLogger(__name__)

LOCAL_CAPTION_PROMPT = "Describe one region of this image in one sentence."


def image_message(prompt: str, image_url: str) -> dict[str, Any]:
    """A user message carrying a text part and an image_url part."""
    content = [
        {"type": "text", "text": prompt},
        {"type": "image_url", "image_url": {"url": image_url}},
    ]
    return Message(MessageRole.USER, content).to_dict()


def choice_texts(body: dict[str, Any]) -> list[str]:
    choices = body.get("choices")
    if not isinstance(choices, list) or not choices:
        raise MalformedResponseError("caption completion has no choices")
    texts = []
    for choice in choices:
        content = (choice.get("message") or {}).get("content")
        if content is None:
            continue
        if not isinstance(content, str):
            raise MalformedResponseError("caption content is not a string")
        texts.append(content.strip())
    return texts


class ChatCaptionPlugin(CaptionContract):
    """
    Caption backend for vision models served behind chat-completions.

    Config:
        endpoint: Base URL (required)
        api_key: Bearer token (optional)
        model: Caption model id
        max_tokens: Caption length budget
        local_caption_temperature: Sampling temperature for local captions
        image_root / image_pattern: How non-URL image refs map to files
        timeout: Request timeout in seconds
    """

    def __init__(self) -> None:
        super().__init__()
        self._client: JsonWireClient | None = None
        self._endpoint = ""
        self._model = "promptcap"
        self._max_tokens = 64
        self._local_temperature = 1.0
        self._image_root: str | None = None
        self._image_pattern = "{image_ref}"

    async def initialize(self, config: dict[str, Any]) -> bool:
        endpoint = config.get("endpoint")
        if not endpoint:
            self._status = BackendStatus.ERROR
            raise BackendLoadError("caption_chat requires an endpoint", backend="caption_chat")
        self._endpoint = str(endpoint)
        self._model = str(config.get("model", self._model))
        self._max_tokens = int(config.get("max_tokens", self._max_tokens))
        self._local_temperature = float(config.get("local_caption_temperature", self._local_temperature))
        self._image_root = config.get("image_root")
        self._image_pattern = str(config.get("image_pattern", self._image_pattern))
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
        details = {"endpoint": self._endpoint, "model": self._model, "image_root": self._image_root}
        if self._status is BackendStatus.READY:
            return HealthStatus(status=BackendStatus.READY, message="caption client ready", details=details)
        return HealthStatus(status=self._status, message="caption client not initialized", details=details)

    @property
    def backend_id(self) -> str:
        return f"caption_chat:{self._model}@{self._endpoint}"

    def _require_client(self) -> JsonWireClient:
        if self._client is None:
            raise BackendLoadError("caption_chat used before initialize()", backend="caption_chat")
        return self._client

    async def caption(self, image_ref: str, prompt: str) -> str:
        client = self._require_client()
        url = resolve_image(image_ref, self._image_root, self._image_pattern)
        payload = {
            "model": self._model,
            "messages": [image_message(prompt, url)],
            "temperature": 0.0,
            "max_tokens": self._max_tokens,
        }
        texts = choice_texts(await client.post_json("/chat/completions", payload))
        return texts[0] if texts else ""

    async def local_captions(self, image_ref: str, count: int) -> list[str]:
        client = self._require_client()
        url = resolve_image(image_ref, self._image_root, self._image_pattern)
        payload = {
            "model": self._model,
            "messages": [image_message(LOCAL_CAPTION_PROMPT, url)],
            "temperature": self._local_temperature,
            "max_tokens": self._max_tokens,
            "n": count,
        }
        texts = choice_texts(await client.post_json("/chat/completions", payload))
        return [text for text in texts if text][:count]


Plugin = ChatCaptionPlugin
