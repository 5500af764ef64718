"""
mock_fixture/plugin.py
======================
Deterministic fixture-driven backend implementing generation, captioning and
embedding. No network, no model weights: every answer is a pure function of
the fixture file and the request.

Fixture file (JSON):
    {
      "backend_id": "mock-v1",                  optional, defaults to a digest of the file
      "embedding_dimension": 64,                optional
      "generate": {
        "by_digest": {"<sha256 of canonical request>": {"text": "...", "logprobs": [...]}},
        "by_prompt": {"<exact prompt>": {"text": "...", "logprobs": [...]}},
        "contains":  [{"substring": "...", "text": "...", "logprobs": [...]}]
      },
      "captions": [{"image_ref": "img_001", "prompt": "...", "text": "..."},
                   {"image_ref": "img_001", "text": "..."}],
      "local_captions": {"img_001": ["...", "..."]},
      "images": ["img_002"]
    }

Generation lookup order: digest, exact prompt, then the first matching
`contains` rule. A caption entry without "prompt" answers any prompt for its
image. An image is known when it appears anywhere in the file.

Embeddings are hash-seeded pseudo-random unit vectors (numpy default_rng).

Dependencies:
    - contracts (all three capability contracts)
"""

import hashlib
import json
import logging
from collections import Counter
from pathlib import Path
from typing import Any

import numpy as np

from contracts.base import BackendStatus, HealthStatus, canonical_json
from contracts.caption_contract import CaptionContract
from contracts.embedding_contract import EmbeddingContract
from contracts.errors import (
    BackendLoadError,
    FixtureMissError,
    ImageNotFoundError,
    MalformedResponseError,
    MissingLogprobsError,
)
from contracts.generation_contract import GenerationContract, GenerationRequest, GenerationResponse

logger = logging.getLogger(__name__)

DEFAULT_DIMENSION = 64


def request_digest(request: GenerationRequest) -> str:
    """Digest under which a fixture file may key a generation response."""
    return hashlib.sha256(canonical_json(request.to_canonical()).encode()).hexdigest()


def hash_unit_vector(value: str, dimension: int = DEFAULT_DIMENSION) -> list[float]:
    """Pseudo-random unit vector seeded by the SHA-256 of value."""
    seed = int.from_bytes(hashlib.sha256(value.encode()).digest()[:8], "big")
    vector = np.random.default_rng(seed).standard_normal(dimension)
    return [float(x) for x in vector / np.linalg.norm(vector)]


class MockFixturePlugin(GenerationContract, CaptionContract, EmbeddingContract):
    """
    Config:
        fixtures: Path to the fixture JSON file (required)
        embedding_dimension: Overrides the file's dimension
    """

    def __init__(self) -> None:
        super().__init__()
        self._path: Path | None = None
        self._backend_id = "mock_fixture"
        self._dimension = DEFAULT_DIMENSION
        self._by_digest: dict[str, dict[str, Any]] = {}
        self._by_prompt: dict[str, dict[str, Any]] = {}
        self._contains: list[dict[str, Any]] = []
        self._captions: list[dict[str, Any]] = []
        self._local: dict[str, list[str]] = {}
        self._images: set[str] = set()
        self.call_counts: Counter[str] = Counter()

    # ------------------------------------------------------------------
    # Lifecycle
    # ------------------------------------------------------------------

    async def initialize(self, config: dict[str, Any]) -> bool:
        path = config.get("fixtures")
        if not path:
            self._status = BackendStatus.ERROR
            raise BackendLoadError("mock_fixture requires a fixtures path", backend="mock_fixture")
        self._path = Path(path)
        try:
            raw = self._path.read_bytes()
            data = json.loads(raw)
        except (OSError, ValueError) as e:
            self._status = BackendStatus.ERROR
            raise BackendLoadError(f"Cannot read fixtures {self._path}: {e}", backend="mock_fixture") from e

        self._load(data, raw)
        if config.get("embedding_dimension") is not None and "embedding_dimension" not in data:
            self._dimension = int(config["embedding_dimension"])
        self._status = BackendStatus.READY
        logger.debug(
            f"Loaded fixtures {self._path}: {len(self._by_digest) + len(self._by_prompt) + len(self._contains)} "
            f"generation rules, {len(self._captions)} captions, {len(self._images)} images"
        )
        return True

    def _load(self, data: dict[str, Any], raw: bytes) -> None:
        self._backend_id = str(data.get("backend_id") or f"mock_fixture:{hashlib.sha256(raw).hexdigest()[:12]}")
        self._dimension = int(data.get("embedding_dimension", DEFAULT_DIMENSION))
        generate = data.get("generate", {})
        self._by_digest = dict(generate.get("by_digest", {}))
        self._by_prompt = dict(generate.get("by_prompt", {}))
        self._contains = list(generate.get("contains", []))
        self._captions = list(data.get("captions", []))
        self._local = {str(k): list(v) for k, v in data.get("local_captions", {}).items()}
        self._images = {str(ref) for ref in data.get("images", [])}
        self._images.update(str(entry["image_ref"]) for entry in self._captions)
        self._images.update(self._local)

    async def shutdown(self) -> bool:
        self._status = BackendStatus.STOPPED
        return True

    def health_check(self) -> HealthStatus:
        details = {"fixtures": str(self._path), "backend_id": self._backend_id, "calls": dict(self.call_counts)}
        if self._status is BackendStatus.READY:
            return HealthStatus(status=BackendStatus.READY, message="fixtures loaded", details=details)
        return HealthStatus(status=self._status, message="fixtures not loaded", details=details)

    @property
    def backend_id(self) -> str:
        return self._backend_id

    # ------------------------------------------------------------------
    # Generation
    # ------------------------------------------------------------------

    def _match(self, request: GenerationRequest) -> dict[str, Any] | None:
        entry = self._by_digest.get(request_digest(request))
        if entry is None:
            entry = self._by_prompt.get(request.prompt)
        if entry is None:
            entry = next((rule for rule in self._contains if rule.get("substring", "") in request.prompt), None)
        return entry

    async def generate(self, request: GenerationRequest) -> GenerationResponse:
        self.call_counts["generate"] += 1
        entry = self._match(request)
        if entry is None:
            raise FixtureMissError(
                f"No generation fixture for prompt: {request.prompt[:80]!r}", digest=request_digest(request)
            )
        text = str(entry.get("text", ""))
        if not request.want_logprobs:
            return GenerationResponse(text=text)
        logprobs = entry.get("logprobs")
        if text and not logprobs:
            raise MissingLogprobsError(f"Fixture for {text!r} carries no logprobs")
        values = tuple(float(v) for v in logprobs or [])
        if any(v > 0 for v in values):
            raise MalformedResponseError(f"Fixture for {text!r} has a positive logprob")
        return GenerationResponse(text=text, token_logprobs=values)

    # ------------------------------------------------------------------
    # Captioning
    # ------------------------------------------------------------------

    def _require_image(self, image_ref: str) -> None:
        if image_ref not in self._images:
            raise ImageNotFoundError(image_ref)

    async def caption(self, image_ref: str, prompt: str) -> str:
        self.call_counts["caption"] += 1
        self._require_image(image_ref)
        generic = None
        for entry in self._captions:
            if entry["image_ref"] != image_ref:
                continue
            if entry.get("prompt") == prompt:
                return str(entry["text"])
            if "prompt" not in entry and generic is None:
                generic = str(entry["text"])
        if generic is None:
            raise FixtureMissError(f"No caption fixture for ({image_ref}, {prompt!r})", image_ref=image_ref)
        return generic

    async def local_captions(self, image_ref: str, count: int) -> list[str]:
        self.call_counts["local_captions"] += 1
        self._require_image(image_ref)
        return [str(text) for text in self._local.get(image_ref, [])][:count]

    # ------------------------------------------------------------------
    # Embedding
    # ------------------------------------------------------------------

    @property
    def dimension(self) -> int | None:
        return self._dimension

    async def embed_text(self, text: str) -> list[float]:
        self.call_counts["embed_text"] += 1
        return hash_unit_vector(f"text:{text}", self._dimension)

    async def embed_image(self, image_ref: str) -> list[float]:
        self.call_counts["embed_image"] += 1
        self._require_image(image_ref)
        return hash_unit_vector(f"image:{image_ref}", self._dimension)


Plugin = MockFixturePlugin
