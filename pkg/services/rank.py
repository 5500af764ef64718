"""
services/rank.py
================
Cosine similarity, top-n knowledge re-ranking and in-context example
selection.

Knowledge items are scored against the image embedding (text and image share
one embedding space). Examples are scored by the mean of the question-question
and image-image cosines. Every ranking sorts by (score descending, original
index ascending), so ties resolve to the earlier item.

Dependencies:
    - services/backends.py (BackendHub embeddings)
    - services/evaluation.py (answer normalization for index building)
"""

import asyncio
import json
import logging
import random
from collections.abc import Awaitable, Callable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from contracts.domain import IcExample, KnowledgeItem, QuestionInstance, SelectorStrategy
from contracts.errors import DatasetError, DimensionMismatchError, EmptyIndexError, InvalidInputError, VectorError

from .backends import BackendHub
from .config import PipelineConfig
from .evaluation import majority_answer

logger = logging.getLogger(__name__)

EmbedFn = Callable[[str], Awaitable[Sequence[float]]]

EXAMPLE_INDEX_SCHEMA: dict[str, Any] = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["question", "caption", "answer", "question_embedding", "image_embedding"],
        "properties": {
            "question": {"type": "string", "minLength": 1},
            "caption": {"type": "string"},
            "answer": {"type": "string", "minLength": 1},
            "question_embedding": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            "image_embedding": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        },
    },
}


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """
    Cosine similarity, clipped to [-1, 1].

    Raises:
        VectorError: lengths differ, or either vector is zero
    """
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape or va.ndim != 1:
        raise VectorError(f"cosine of vectors with lengths {va.size} and {vb.size}")
    norm_a = float(np.linalg.norm(va))
    norm_b = float(np.linalg.norm(vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise VectorError("cosine of a zero vector")
    return float(np.clip(float(np.dot(va, vb)) / (norm_a * norm_b), -1.0, 1.0))


def order_by_score(scores: Sequence[float]) -> list[int]:
    """Indices sorted by score descending, then index ascending."""
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def text_embedder(hub: BackendHub) -> EmbedFn:
    async def embed(text: str) -> Sequence[float]:
        return (await hub.embed_text(text)).vector

    return embed


async def rerank_top_n(
    pool: list[KnowledgeItem], image_embedding: Sequence[float], n: int, embed: EmbedFn
) -> list[KnowledgeItem]:
    """
    Keep the n pool items most similar to the image, best first.

    Scores are written into the returned items.
    """
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    if not pool:
        return []
    vectors = await asyncio.gather(*(embed(item.text) for item in pool))
    scores = [cosine(vector, image_embedding) for vector in vectors]
    return [replace(pool[i], score=scores[i]) for i in order_by_score(scores)[:n]]


@dataclass(frozen=True)
class ExampleIndex:
    """Ordered in-context examples with precomputed embeddings of one dimension."""

    examples: tuple[IcExample, ...]
    dimension: int
    source_path: str = ""

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise InvalidInputError("index dimension must be positive")
        for position, example in enumerate(self.examples):
            if len(example.question_embedding) != self.dimension or len(example.image_embedding) != self.dimension:
                raise DimensionMismatchError(
                    f"example {position} embeddings do not have dimension {self.dimension}", position=position
                )

    def __len__(self) -> int:
        return len(self.examples)


def parse_example_index(records: Any, source_path: str = "") -> ExampleIndex:
    try:
        jsonschema.validate(records, EXAMPLE_INDEX_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path)
        raise DatasetError(f"Invalid example index {source_path} at {where or '<root>'}: {e.message}") from e
    if not records:
        raise DatasetError(f"Example index {source_path} is empty")

    examples = tuple(IcExample.from_dict(record) for record in records)
    dimension = len(examples[0].question_embedding)
    try:
        return ExampleIndex(examples=examples, dimension=dimension, source_path=source_path)
    except DimensionMismatchError as e:
        raise DatasetError(f"Example index {source_path}: {e.message}", **e.details) from e


def load_example_index(path: str | Path) -> ExampleIndex:
    """Load an example index file (JSON array of example records)."""
    index_path = Path(path)
    try:
        with open(index_path, encoding="utf-8") as f:
            records = json.load(f)
    except (OSError, ValueError) as e:
        raise DatasetError(f"Cannot read example index {index_path}: {e}") from e
    index = parse_example_index(records, str(index_path))
    logger.info(f"Loaded {len(index)} in-context examples (dimension {index.dimension}) from {index_path}")
    return index


def dump_example_index(index: ExampleIndex, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps([example.to_dict() for example in index.examples], ensure_ascii=False, indent=1) + "\n",
        encoding="utf-8",
    )


def score_examples(
    question_embedding: Sequence[float], image_embedding: Sequence[float], index: ExampleIndex
) -> list[float]:
    """Mean of question and image cosine for every example, in index order."""
    return [
        (cosine(question_embedding, example.question_embedding) + cosine(image_embedding, example.image_embedding)) / 2
        for example in index.examples
    ]


def random_order(size: int, seed: int, question_id: str) -> list[int]:
    """A reproducible permutation of range(size) per (seed, question)."""
    order = list(range(size))
    random.Random(f"{seed}:{question_id}").shuffle(order)
    return order


async def _candidate_order(
    test: QuestionInstance, index: ExampleIndex, cfg: PipelineConfig, hub: BackendHub
) -> list[int]:
    if len(index) == 0:
        raise EmptyIndexError("cannot select examples from an empty index")
    if cfg.selector_strategy is SelectorStrategy.RANDOM:
        assert cfg.random_seed is not None
        return random_order(len(index), cfg.random_seed, test.question_id)

    question_vec, image_vec = await asyncio.gather(hub.embed_text(test.question_text), hub.embed_image(test.image_ref))
    for vec in (question_vec, image_vec):
        if vec.dimension != index.dimension:
            raise DimensionMismatchError(
                f"test embedding dimension {vec.dimension} does not match index dimension {index.dimension}",
                expected=index.dimension,
                actual=vec.dimension,
            )
    return order_by_score(score_examples(question_vec.vector, image_vec.vector, index))


async def select_examples(
    test: QuestionInstance, index: ExampleIndex, m: int, cfg: PipelineConfig, hub: BackendHub
) -> list[IcExample]:
    """Top-m examples (all of them when the index is smaller)."""
    return await expand_example_pool(test, index, m, 1, cfg, hub)


async def expand_example_pool(
    test: QuestionInstance, index: ExampleIndex, m: int, q: int, cfg: PipelineConfig, hub: BackendHub
) -> list[IcExample]:
    """Top m*q examples, to be partitioned over q ensemble prompts."""
    if m < 1 or q < 1:
        raise InvalidInputError(f"m and q must be >= 1, got m={m}, q={q}")
    order = await _candidate_order(test, index, cfg, hub)
    return [index.examples[i] for i in order[: m * q]]


async def build_example_index(
    train: list[QuestionInstance], hub: BackendHub, source_path: str = "", workers: int = 4
) -> ExampleIndex:
    """
    Build an index from annotated training questions.

    Each example gets a caption prompted by its own question, its most frequent
    normalized gold answer, and question/image embeddings from the hub.
    """
    annotated = [instance for instance in train if instance.annotations]
    if not annotated:
        raise EmptyIndexError("no annotated training questions to index")
    if len(annotated) < len(train):
        logger.warning(f"Skipping {len(train) - len(annotated)} training questions without annotations")

    limiter = asyncio.Semaphore(workers)

    async def build(instance: QuestionInstance) -> IcExample:
        async with limiter:
            caption = await hub.caption(instance.image_ref, instance.question_text)
            question_vec = await hub.embed_text(instance.question_text)
            image_vec = await hub.embed_image(instance.image_ref)
        assert instance.annotations is not None
        return IcExample(
            question_text=instance.question_text,
            caption_text=caption.text,
            answer_text=majority_answer(instance.annotations),
            question_embedding=question_vec.vector,
            image_embedding=image_vec.vector,
        )

    examples = await asyncio.gather(*(build(instance) for instance in annotated))
    return ExampleIndex(examples=tuple(examples), dimension=len(examples[0].question_embedding), source_path=source_path)
