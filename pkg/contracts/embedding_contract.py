"""
contracts/embedding_contract.py
===============================
Cross-modal embedding contract.

Extends: BackendBase

Text and image embeddings of one backend instance live in one space and share
one dimension, so cosine similarity between a knowledge sentence and an image
is meaningful.
"""

from abc import abstractmethod
from dataclasses import dataclass
from typing import Any

from .base import BackendBase
from .errors import InvalidInputError


@dataclass(frozen=True)
class EmbeddingResponse:
    """An embedding vector and its dimension."""

    vector: tuple[float, ...]
    dimension: int

    def __post_init__(self) -> None:
        if self.dimension < 1 or len(self.vector) != self.dimension:
            raise InvalidInputError(f"vector length {len(self.vector)} does not match dimension {self.dimension}")

    def to_dict(self) -> dict[str, Any]:
        return {"vector": list(self.vector), "dimension": self.dimension}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EmbeddingResponse":
        return cls(vector=tuple(float(v) for v in data["vector"]), dimension=int(data["dimension"]))


class EmbeddingContract(BackendBase):
    """Abstract contract for embedding backends."""

    @property
    @abstractmethod
    def dimension(self) -> int | None:
        """Declared dimension, or None until the first response fixes it."""

    @abstractmethod
    async def embed_text(self, text: str) -> list[float]:
        """Embed a text. The vector need not be normalized."""

    @abstractmethod
    async def embed_image(self, image_ref: str) -> list[float]:
        """
        Embed an image.

        Raises:
            ImageNotFoundError: image_ref cannot be resolved
        """
