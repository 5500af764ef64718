"""
embed_http/plugin.py
====================
Cross-modal embedding backend over an embeddings-style HTTP endpoint.

Request:  {"model": ..., "input": [<text or image URL>], "input_type": "text" | "image"}
Response: {"data": [{"embedding": [float, ...]}]}

Text and image inputs go to the same model, so both land in one space. The
dimension is taken from config when given, otherwise fixed by the first
response and enforced from then on.

Dependencies:
    - contracts/embedding_contract.py (EmbeddingContract)
    - plugins/_host/wire.py (JsonWireClient, resolve_image)
"""

from typing import Any

import httpx

from contracts.base import BackendStatus, HealthStatus
from contracts.embedding_contract import EmbeddingContract
from contracts.errors import BackendLoadError, DimensionMismatchError, MalformedResponseError
from plugins._host.wire import JsonWireClient, resolve_image


class HttpEmbeddingPlugin(EmbeddingContract):
    """
    Config:
        endpoint: Base URL (required)
        api_key: Bearer token (optional)
        model: Embedding model id
        dimension: Declared dimension (optional)
        image_root / image_pattern: How non-URL image refs map to files
        timeout: Request timeout in seconds
    """

    def __init__(self) -> None:
        super().__init__()
        self._client: JsonWireClient | None = None
        self._endpoint = ""
        self._model = "blip-itm"
        self._dimension: int | None = None
        self._image_root: str | None = None
        self._image_pattern = "{image_ref}"

    async def initialize(self, config: dict[str, Any]) -> bool:
        endpoint = config.get("endpoint")
        if not endpoint:
            self._status = BackendStatus.ERROR
            raise BackendLoadError("embed_http requires an endpoint", backend="embed_http")
        self._endpoint = str(endpoint)
        self._model = str(config.get("model", self._model))
        if config.get("dimension") is not None:
            self._dimension = int(config["dimension"])
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
        details = {"endpoint": self._endpoint, "model": self._model, "dimension": self._dimension}
        if self._status is BackendStatus.READY:
            return HealthStatus(status=BackendStatus.READY, message="embedding client ready", details=details)
        return HealthStatus(status=self._status, message="embedding client not initialized", details=details)

    @property
    def backend_id(self) -> str:
        return f"embed_http:{self._model}@{self._endpoint}"

    @property
    def dimension(self) -> int | None:
        return self._dimension

    async def _embed(self, value: str, input_type: str) -> list[float]:
        if self._client is None:
            raise BackendLoadError("embed_http used before initialize()", backend="embed_http")
        body = await self._client.post_json(
            "/embeddings", {"model": self._model, "input": [value], "input_type": input_type}
        )
        data = body.get("data")
        if not isinstance(data, list) or not data or not isinstance(data[0], dict):
            raise MalformedResponseError("embedding response has no data")
        vector = data[0].get("embedding")
        if not isinstance(vector, list) or not vector or not all(isinstance(v, (int, float)) for v in vector):
            raise MalformedResponseError("embedding is not a list of numbers")

        if self._dimension is None:
            self._dimension = len(vector)
        elif len(vector) != self._dimension:
            raise DimensionMismatchError(
                f"embedding has dimension {len(vector)}, expected {self._dimension}",
                expected=self._dimension,
                actual=len(vector),
            )
        return [float(v) for v in vector]

    async def embed_text(self, text: str) -> list[float]:
        return await self._embed(text, "text")

    async def embed_image(self, image_ref: str) -> list[float]:
        return await self._embed(resolve_image(image_ref, self._image_root, self._image_pattern), "image")


Plugin = HttpEmbeddingPlugin
