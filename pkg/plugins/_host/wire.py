"""
plugins/_host/wire.py
=====================
Shared HTTP+JSON plumbing for the live backends.

Maps httpx failures onto the backend error taxonomy:
    - connect/read errors, timeouts, HTTP 429 and 5xx -> TransportError (retryable)
    - other HTTP errors and non-JSON bodies          -> MalformedResponseError

Also resolves image references into something a chat-completions or
embeddings endpoint accepts (an http(s) URL or a base64 data URL).
"""

import base64
import logging
import mimetypes
from pathlib import Path
from typing import Any

import httpx

from contracts.errors import ImageNotFoundError, MalformedResponseError, TransportError

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})


class JsonWireClient:
    """
    Thin async JSON client around httpx.AsyncClient.

    Usage:
        client = JsonWireClient("http://localhost:8000/v1", api_key="sk-...", timeout=60)
        body = await client.post_json("/chat/completions", payload)
        await client.aclose()
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        transport: httpx.AsyncBaseTransport | None = None,
    ):
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self.endpoint = endpoint.rstrip("/")
        self._client = httpx.AsyncClient(base_url=self.endpoint, headers=headers, timeout=timeout, transport=transport)

    async def post_json(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        try:
            response = await self._client.post(path, json=payload)
        except httpx.TransportError as e:
            raise TransportError(f"{type(e).__name__} calling {self.endpoint}{path}: {e}", endpoint=self.endpoint) from e

        if response.status_code in RETRYABLE_STATUS:
            raise TransportError(
                f"HTTP {response.status_code} from {self.endpoint}{path}", status=response.status_code
            )
        if response.is_error:
            raise MalformedResponseError(
                f"HTTP {response.status_code} from {self.endpoint}{path}: {response.text[:200]}",
                status=response.status_code,
            )
        try:
            body = response.json()
        except ValueError as e:
            raise MalformedResponseError(f"Non-JSON body from {self.endpoint}{path}") from e
        if not isinstance(body, dict):
            raise MalformedResponseError(f"Expected a JSON object from {self.endpoint}{path}")
        return body

    async def aclose(self) -> None:
        await self._client.aclose()


def resolve_image(image_ref: str, image_root: str | None, image_pattern: str = "{image_ref}") -> str:
    """
    Turn an image reference into a URL usable in a request payload.

    http(s) and data URLs pass through. Anything else is formatted through
    image_pattern (placeholders: image_ref, and image_id when the ref is all
    digits), joined to image_root, read and base64-encoded.

    Raises:
        ImageNotFoundError: the resolved file does not exist
    """
    if image_ref.startswith(("http://", "https://", "data:")):
        return image_ref

    fields: dict[str, Any] = {"image_ref": image_ref}
    if image_ref.isdigit():
        fields["image_id"] = int(image_ref)
    try:
        relative = image_pattern.format(**fields)
    except (KeyError, ValueError, IndexError) as e:
        raise ImageNotFoundError(image_ref) from e

    path = Path(image_root or ".") / relative
    if not path.is_file():
        logger.debug(f"Image {image_ref} resolved to missing file {path}")
        raise ImageNotFoundError(image_ref)

    mime = mimetypes.guess_type(path.name)[0] or "image/jpeg"
    encoded = base64.b64encode(path.read_bytes()).decode("ascii")
    return f"data:{mime};base64,{encoded}"
