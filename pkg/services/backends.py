"""
services/backends.py
====================
BackendHub: the one door every pipeline stage uses to reach a model.

Wraps the three capability backends with
    cache lookup -> per-key lock -> per-capability in-flight cap
    -> retry (TransportError only) -> response validation -> cache store

and returns the value as it was stored, so a cache miss and a later hit
deserialize to equal objects.

Usage:
    async with await build_hub(cfg) as hub:
        caption = await hub.caption("img_001", "What is the color of the flower?")
        vector = await hub.embed_text("roses are red")
"""

import asyncio
import json
import logging
from collections import Counter
from collections.abc import Awaitable, Callable
from typing import Any

import numpy as np

from contracts.base import BackendBase, HealthStatus, canonical_json
from contracts.caption_contract import CaptionContract
from contracts.domain import Caption, KnowledgeItem, KnowledgeSource
from contracts.embedding_contract import EmbeddingContract, EmbeddingResponse
from contracts.errors import (
    DimensionMismatchError,
    InvalidInputError,
    MalformedResponseError,
    MissingLogprobsError,
    TransportError,
)
from contracts.generation_contract import GenerationContract, GenerationRequest, GenerationResponse
from plugins._host.loader import BackendLoader

from .cache import CacheRecord, ResponseCache, cache_key
from .config import PipelineConfig

logger = logging.getLogger(__name__)

CAPABILITIES = ("generate", "caption", "local_captions", "embed_text", "embed_image")

NORM_TOLERANCE = 1e-9


def normalize_vector(values: list[float], expected_dimension: int | None) -> list[float]:
    """
    Unit-normalize an embedding, checking its dimension.

    Raises:
        DimensionMismatchError: length differs from expected_dimension
        MalformedResponseError: empty, non-finite or zero vector
    """
    vector = np.asarray(values, dtype=np.float64)
    if vector.ndim != 1 or vector.size == 0:
        raise MalformedResponseError("embedding is empty")
    if expected_dimension is not None and vector.size != expected_dimension:
        raise DimensionMismatchError(
            f"embedding has dimension {vector.size}, expected {expected_dimension}",
            expected=expected_dimension,
            actual=int(vector.size),
        )
    if not np.all(np.isfinite(vector)):
        raise MalformedResponseError("embedding contains non-finite values")
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise MalformedResponseError("embedding is the zero vector")
    return [float(x) for x in vector / norm]


class BackendHub:
    """
    Cached, retried, concurrency-capped access to the model backends.

    Attributes:
        calls: Backend invocations per capability (retries included)
        cache_hits: Requests answered from the cache per capability
        cache_misses: Requests answered by the backend and stored, per capability
    """

    def __init__(
        self,
        llm: GenerationContract,
        captioner: CaptionContract,
        embedder: EmbeddingContract,
        cache: ResponseCache,
        retry_attempts: int = 3,
        retry_backoff_s: float = 0.5,
        max_inflight: int = 8,
        sleep: Callable[[float], Awaitable[Any]] = asyncio.sleep,
        loader: BackendLoader | None = None,
    ):
        self.llm = llm
        self.captioner = captioner
        self.embedder = embedder
        self.cache = cache
        self.retry_attempts = retry_attempts
        self.retry_backoff_s = retry_backoff_s
        self.max_inflight = max_inflight
        self._sleep = sleep
        self._loader = loader
        self._locks: dict[str, asyncio.Lock] = {}
        self._semaphores: dict[str, asyncio.Semaphore] = {}
        self._dimension: int | None = embedder.dimension
        self.calls: Counter[str] = Counter()
        self.cache_hits: Counter[str] = Counter()
        self.cache_misses: Counter[str] = Counter()

    async def __aenter__(self) -> "BackendHub":
        return self

    async def __aexit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> bool:
        await self.shutdown()
        return False

    async def shutdown(self) -> None:
        if self._loader is not None:
            await self._loader.shutdown_all()

    # ------------------------------------------------------------------
    # Plumbing
    # ------------------------------------------------------------------

    def _semaphore(self, capability: str) -> asyncio.Semaphore:
        if capability not in self._semaphores:
            self._semaphores[capability] = asyncio.Semaphore(self.max_inflight)
        return self._semaphores[capability]

    async def _with_retry(self, capability: str, call: Callable[[], Awaitable[dict[str, Any]]]) -> dict[str, Any]:
        last_error: TransportError | None = None
        for attempt in range(self.retry_attempts):
            self.calls[capability] += 1
            try:
                return await call()
            except TransportError as e:
                last_error = e
                if attempt + 1 < self.retry_attempts:
                    delay = self.retry_backoff_s * (2**attempt)
                    logger.warning(
                        f"{capability} attempt {attempt + 1}/{self.retry_attempts} failed: {e.message}; "
                        f"retrying in {delay:.2f}s"
                    )
                    await self._sleep(delay)
        assert last_error is not None
        raise last_error

    async def _cached(
        self,
        capability: str,
        backend: BackendBase,
        request: dict[str, Any],
        call: Callable[[], Awaitable[dict[str, Any]]],
        validate: Callable[[dict[str, Any]], dict[str, Any]],
    ) -> dict[str, Any]:
        canonical = canonical_json(request)
        key = cache_key(backend.backend_id, canonical)

        record = self.cache.get(key)
        if record is None:
            lock = self._locks.setdefault(key, asyncio.Lock())
            try:
                async with lock:
                    # a concurrent identical request may have filled it meanwhile
                    record = self.cache.get(key)
                    if record is None:
                        async with self._semaphore(capability):
                            payload = await self._with_retry(capability, call)
                        stored = json.loads(canonical_json(validate(payload)))
                        self.cache.put(CacheRecord.create(backend.backend_id, canonical, stored))
                        self.cache_misses[capability] += 1
                        return stored
            finally:
                # waiters keep their reference; later requests find the record on disk
                if self._locks.get(key) is lock:
                    del self._locks[key]

        self.cache_hits[capability] += 1
        return record.response

    # ------------------------------------------------------------------
    # Capabilities
    # ------------------------------------------------------------------

    async def generate(self, request: GenerationRequest) -> GenerationResponse:
        """
        Generate text, with token log-probabilities when requested.

        Raises:
            TransportError: after retry_attempts transport failures
            MissingLogprobsError: logprobs requested, none returned
        """

        async def call() -> dict[str, Any]:
            return (await self.llm.generate(request)).to_dict()

        def validate(payload: dict[str, Any]) -> dict[str, Any]:
            if request.want_logprobs and payload["text"] and not payload["token_logprobs"]:
                raise MissingLogprobsError("backend returned no token log-probabilities")
            if any(lp > 0 for lp in payload["token_logprobs"]):
                raise MalformedResponseError("positive token log-probability")
            return payload

        stored = await self._cached("generate", self.llm, request.to_canonical(), call, validate)
        return GenerationResponse.from_dict(stored)

    async def caption(self, image_ref: str, prompt: str) -> Caption:
        """Question-aware caption; prompt_used records the conditioning prompt."""
        if not image_ref:
            raise InvalidInputError("image_ref must be non-empty")
        if not prompt.strip():
            raise InvalidInputError("caption prompt must be non-empty")

        async def call() -> dict[str, Any]:
            return {"text": (await self.captioner.caption(image_ref, prompt)).strip()}

        def validate(payload: dict[str, Any]) -> dict[str, Any]:
            if not payload["text"]:
                raise MalformedResponseError(f"empty caption for {image_ref}", image_ref=image_ref)
            return payload

        request = {"kind": "caption", "image_ref": image_ref, "prompt": prompt}
        stored = await self._cached("caption", self.captioner, request, call, validate)
        return Caption(text=stored["text"], prompt_used=prompt)

    async def local_captions(self, image_ref: str, count: int) -> list[KnowledgeItem]:
        """Up to count distinct region captions, tagged local_caption."""
        if count < 1:
            raise InvalidInputError(f"local caption count must be >= 1, got {count}")

        async def call() -> dict[str, Any]:
            raw = await self.captioner.local_captions(image_ref, count)
            distinct = list(dict.fromkeys(text.strip() for text in raw if text and text.strip()))
            return {"captions": distinct[:count]}

        def validate(payload: dict[str, Any]) -> dict[str, Any]:
            if not payload["captions"]:
                raise MalformedResponseError(f"zero local captions for {image_ref}", image_ref=image_ref)
            return payload

        request = {"kind": "local_captions", "image_ref": image_ref, "count": count}
        stored = await self._cached("local_captions", self.captioner, request, call, validate)
        return [KnowledgeItem(text=text, source=KnowledgeSource.LOCAL_CAPTION) for text in stored["captions"]]

    def _embedding_validator(self) -> Callable[[dict[str, Any]], dict[str, Any]]:
        def validate(payload: dict[str, Any]) -> dict[str, Any]:
            vector = normalize_vector(payload["vector"], self._dimension)
            if self._dimension is None:
                self._dimension = len(vector)
            return {"vector": vector, "dimension": len(vector)}

        return validate

    def _embedding_response(self, stored: dict[str, Any]) -> EmbeddingResponse:
        if self._dimension is not None and stored["dimension"] != self._dimension:
            raise DimensionMismatchError(
                f"cached embedding has dimension {stored['dimension']}, expected {self._dimension}",
                expected=self._dimension,
                actual=stored["dimension"],
            )
        self._dimension = stored["dimension"]
        return EmbeddingResponse.from_dict(stored)

    async def embed_text(self, text: str) -> EmbeddingResponse:
        """Unit-normalized text embedding."""
        if not text.strip():
            raise InvalidInputError("cannot embed empty text")

        async def call() -> dict[str, Any]:
            return {"vector": await self.embedder.embed_text(text)}

        request = {"kind": "embed_text", "text": text}
        stored = await self._cached("embed_text", self.embedder, request, call, self._embedding_validator())
        return self._embedding_response(stored)

    async def embed_image(self, image_ref: str) -> EmbeddingResponse:
        """Unit-normalized image embedding, in the same space as embed_text."""
        if not image_ref:
            raise InvalidInputError("cannot embed an empty image_ref")

        async def call() -> dict[str, Any]:
            return {"vector": await self.embedder.embed_image(image_ref)}

        request = {"kind": "embed_image", "image_ref": image_ref}
        stored = await self._cached("embed_image", self.embedder, request, call, self._embedding_validator())
        return self._embedding_response(stored)

    # ------------------------------------------------------------------
    # Diagnostics
    # ------------------------------------------------------------------

    def health(self) -> dict[str, HealthStatus]:
        return {
            "llm": self.llm.health_check(),
            "caption": self.captioner.health_check(),
            "embed": self.embedder.health_check(),
        }

    def loaded_backends(self) -> list[dict[str, Any]]:
        """Plugins loaded for this hub; one entry per plugin even when it fills several roles."""
        if self._loader is None:
            return []
        return [loaded.to_dict() for loaded in self._loader.loaded.values()]

    def cache_hit_rate(self) -> float | None:
        """Share of resolved requests served from the cache; None before any request."""
        hits = sum(self.cache_hits.values())
        total = hits + sum(self.cache_misses.values())
        return hits / total if total else None

    def stats(self) -> dict[str, Any]:
        return {
            "calls": {capability: self.calls[capability] for capability in CAPABILITIES},
            "cache_hits": {capability: self.cache_hits[capability] for capability in CAPABILITIES},
            "cache_misses": {capability: self.cache_misses[capability] for capability in CAPABILITIES},
            "cache_hit_rate": self.cache_hit_rate(),
            "cache_records": len(self.cache),
        }


def backend_configs(cfg: PipelineConfig) -> dict[str, dict[str, Any]]:
    """Per-role plugin configuration derived from the pipeline config."""
    common = {"timeout": cfg.request_timeout_s, "fixtures": cfg.mock_fixtures}
    images = {"image_root": cfg.image_root, "image_pattern": cfg.image_pattern}
    return {
        "llm": {**common, "endpoint": cfg.llm_endpoint, "api_key": cfg.llm_api_key, "model": cfg.llm_model},
        "caption": {
            **common,
            **images,
            "endpoint": cfg.caption_endpoint,
            "api_key": cfg.caption_api_key,
            "model": cfg.caption_model,
            "local_caption_temperature": cfg.local_caption_temperature,
        },
        "embed": {
            **common,
            **images,
            "endpoint": cfg.embed_endpoint,
            "api_key": cfg.embed_api_key,
            "model": cfg.embed_model,
            "dimension": cfg.embed_dimension,
        },
    }


async def build_hub(cfg: PipelineConfig, loader: BackendLoader | None = None) -> BackendHub:
    """
    Load the configured backends and wrap them in a BackendHub.

    Raises:
        BackendLoadError: a backend cannot be found, imported or initialized
    """
    loader = loader or BackendLoader()
    configs = backend_configs(cfg)
    llm = await loader.load(cfg.backend_for("llm"), GenerationContract, configs["llm"])
    captioner = await loader.load(cfg.backend_for("caption"), CaptionContract, configs["caption"])
    embedder = await loader.load(cfg.backend_for("embed"), EmbeddingContract, configs["embed"])
    return BackendHub(
        llm,
        captioner,
        embedder,
        ResponseCache(cfg.cache_dir),
        retry_attempts=cfg.retry_attempts,
        retry_backoff_s=cfg.retry_backoff_s,
        max_inflight=cfg.max_inflight,
        loader=loader,
    )
