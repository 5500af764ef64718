"""
Test Script: Re-ranking and Example Selection
=============================================
Exhaustive-sort oracles for knowledge re-ranking and in-context example
selection, plus example index loading and building.

Usage:
    pytest services/tests/test_rank.py
"""

import asyncio
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from contracts.domain import IcExample, KnowledgeItem, KnowledgeSource, QuestionInstance
from contracts.embedding_contract import EmbeddingResponse
from contracts.errors import DatasetError, DimensionMismatchError, EmptyIndexError, InvalidInputError, VectorError
from services.config import build_config
from services.rank import (
    ExampleIndex,
    build_example_index,
    cosine,
    dump_example_index,
    expand_example_pool,
    load_example_index,
    parse_example_index,
    random_order,
    rerank_top_n,
    select_examples,
)

from .backend_stubs import StaticCaptioner

REPO_ROOT = Path(__file__).resolve().parents[2]
DIM = 8
TEST_QUESTION = QuestionInstance("q1", "What animal has a similar color?", "img_001")


class VectorHub:
    """Hands out fixed test-question embeddings."""

    def __init__(self, question_vec=None, image_vec=None):
        self.question_vec = question_vec
        self.image_vec = image_vec
        self.calls = 0

    async def embed_text(self, text):
        self.calls += 1
        return EmbeddingResponse(tuple(self.question_vec), len(self.question_vec))

    async def embed_image(self, image_ref):
        self.calls += 1
        return EmbeddingResponse(tuple(self.image_vec), len(self.image_vec))


def oracle_cosine(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.dot(a, b)) / (float(np.linalg.norm(a)) * float(np.linalg.norm(b)))


def oracle_top(scores, k):
    # list.sort is stable, so equal scores keep index order
    return sorted(range(len(scores)), key=lambda i: -scores[i])[:k]


def random_pool(rng, size, palette):
    """Items whose vectors come from a small palette, so ties are frequent."""
    picks = rng.integers(0, len(palette), size=size)
    items = [KnowledgeItem(f"fact {i}", KnowledgeSource.ELICITED) for i in range(size)]
    vectors = {item.text: palette[p] for item, p in zip(items, picks)}
    return items, vectors


def table_embed(vectors, scale=1.0):
    async def embed(text):
        return [scale * v for v in vectors[text]]

    return embed


def example(i, q_vec, i_vec):
    return IcExample(f"question {i}", f"caption {i}", f"answer {i}", tuple(q_vec), tuple(i_vec))


def random_index(rng, size):
    q_palette = [rng.standard_normal(DIM) for _ in range(5)]
    i_palette = [rng.standard_normal(DIM) for _ in range(5)]
    examples = tuple(
        example(i, q_palette[rng.integers(0, 5)], i_palette[rng.integers(0, 5)]) for i in range(size)
    )
    return ExampleIndex(examples=examples, dimension=DIM)


def similarity_config():
    return build_config({"mock_fixtures": "unused.json"})


# ============================================
# cosine
# ============================================


def test_cosine_basics():
    assert cosine([1.0, 0.0], [2.0, 0.0]) == pytest.approx(1.0)
    assert cosine([1.0, 0.0], [-3.0, 0.0]) == pytest.approx(-1.0)
    assert cosine([1.0, 0.0], [0.0, 5.0]) == pytest.approx(0.0)
    assert cosine([1, 2, 3], [4, 5, 6]) == pytest.approx(32 / (math.sqrt(14) * math.sqrt(77)))
    assert cosine([1, 2, 3], [4, 5, 6]) == pytest.approx(0.974631846)


def test_cosine_rejects_bad_vectors():
    with pytest.raises(VectorError):
        cosine([1.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(VectorError):
        cosine([0.0, 0.0], [1.0, 0.0])


# ============================================
# rerank_top_n
# ============================================


def test_rerank_matches_sort_oracle():
    rng = np.random.default_rng(20240611)
    for _ in range(500):
        size = int(rng.integers(0, 21))
        n = int(rng.integers(1, 25))
        palette = [rng.standard_normal(DIM) for _ in range(4)]
        pool, vectors = random_pool(rng, size, palette)
        image = rng.standard_normal(DIM)

        selected = asyncio.run(rerank_top_n(pool, list(image), n, table_embed(vectors)))

        scores = [oracle_cosine(vectors[item.text], image) for item in pool]
        expected = oracle_top(scores, n)
        assert [item.text for item in selected] == [pool[i].text for i in expected]
        assert [item.score for item in selected] == pytest.approx([scores[i] for i in expected])
        assert len(selected) == min(n, size)


def test_rerank_is_scale_invariant():
    rng = np.random.default_rng(7)
    for _ in range(100):
        palette = [rng.standard_normal(DIM) for _ in range(4)]
        pool, vectors = random_pool(rng, int(rng.integers(1, 21)), palette)
        image = rng.standard_normal(DIM)
        n = int(rng.integers(1, 10))

        plain = asyncio.run(rerank_top_n(pool, list(image), n, table_embed(vectors)))
        scaled = asyncio.run(rerank_top_n(pool, list(image * 1000), n, table_embed(vectors, scale=1000.0)))
        assert [item.text for item in plain] == [item.text for item in scaled]


def test_rerank_ties_keep_pool_order():
    pool = [KnowledgeItem(f"fact {i}", KnowledgeSource.LOCAL_CAPTION) for i in range(5)]
    same = {item.text: [1.0, 0.0] for item in pool}
    selected = asyncio.run(rerank_top_n(pool, [1.0, 1.0], 3, table_embed(same)))
    assert [item.text for item in selected] == ["fact 0", "fact 1", "fact 2"]


def test_rerank_edge_cases():
    assert asyncio.run(rerank_top_n([], [1.0, 0.0], 9, table_embed({}))) == []
    with pytest.raises(InvalidInputError):
        asyncio.run(rerank_top_n([], [1.0, 0.0], 0, table_embed({})))


# ============================================
# select_examples / expand_example_pool
# ============================================


def test_selection_matches_averaged_cosine_oracle():
    rng = np.random.default_rng(99)
    cfg = similarity_config()
    for _ in range(200):
        index = random_index(rng, int(rng.integers(1, 31)))
        m = int(rng.integers(1, 13))
        q_vec, i_vec = rng.standard_normal(DIM), rng.standard_normal(DIM)
        hub = VectorHub(list(q_vec), list(i_vec))

        selected = asyncio.run(select_examples(TEST_QUESTION, index, m, cfg, hub))

        scores = [
            (oracle_cosine(q_vec, ex.question_embedding) + oracle_cosine(i_vec, ex.image_embedding)) / 2
            for ex in index.examples
        ]
        assert [ex.question_text for ex in selected] == [
            index.examples[i].question_text for i in oracle_top(scores, m)
        ]


def test_expanded_pool_extends_the_selection():
    rng = np.random.default_rng(5)
    cfg = similarity_config()
    for _ in range(50):
        index = random_index(rng, int(rng.integers(1, 31)))
        hub = VectorHub(list(rng.standard_normal(DIM)), list(rng.standard_normal(DIM)))
        m, q = int(rng.integers(1, 11)), int(rng.integers(1, 6))

        top_m = asyncio.run(select_examples(TEST_QUESTION, index, m, cfg, hub))
        pool = asyncio.run(expand_example_pool(TEST_QUESTION, index, m, q, cfg, hub))

        assert pool[:m] == top_m
        assert len(pool) == min(m * q, len(index))


def test_random_strategy_is_seeded_and_skips_embeddings():
    rng = np.random.default_rng(3)
    index = random_index(rng, 30)
    cfg = build_config({"mock_fixtures": "unused.json", "selector_strategy": "random", "random_seed": 7})
    hub = VectorHub()

    first = asyncio.run(select_examples(TEST_QUESTION, index, 10, cfg, hub))
    second = asyncio.run(select_examples(TEST_QUESTION, index, 10, cfg, hub))

    assert first == second
    assert hub.calls == 0
    assert [ex.question_text for ex in first] == [index.examples[i].question_text for i in random_order(30, 7, "q1")[:10]]


def test_random_order_is_stable_across_processes():
    script = "from services.rank import random_order; print(random_order(30, 7, 'q1'))"
    result = subprocess.run(
        [sys.executable, "-c", script], cwd=REPO_ROOT, capture_output=True, text=True, check=True
    )
    assert result.stdout.strip() == str(random_order(30, 7, "q1"))
    assert sorted(random_order(30, 7, "q1")) == list(range(30))
    assert random_order(30, 7, "q1") != random_order(30, 8, "q1")


def test_selection_errors():
    cfg = similarity_config()
    empty = ExampleIndex(examples=(), dimension=DIM)
    with pytest.raises(EmptyIndexError):
        asyncio.run(select_examples(TEST_QUESTION, empty, 5, cfg, VectorHub([1.0] * DIM, [1.0] * DIM)))

    index = random_index(np.random.default_rng(1), 4)
    with pytest.raises(DimensionMismatchError):
        asyncio.run(select_examples(TEST_QUESTION, index, 2, cfg, VectorHub([1.0] * 4, [1.0] * 4)))
    with pytest.raises(InvalidInputError):
        asyncio.run(expand_example_pool(TEST_QUESTION, index, 0, 5, cfg, VectorHub([1.0] * DIM, [1.0] * DIM)))


# ============================================
# Example index files
# ============================================


def index_record(question="What color is the bus?", dim=3):
    return {
        "question": question,
        "caption": "a red bus",
        "answer": "red",
        "question_embedding": [1.0] + [0.0] * (dim - 1),
        "image_embedding": [0.0] * (dim - 1) + [1.0],
    }


def test_load_and_dump_index(tmp_path):
    path = tmp_path / "examples.json"
    path.write_text(json.dumps([index_record(), index_record("What is on the plate?")]), encoding="utf-8")

    index = load_example_index(path)
    assert len(index) == 2
    assert index.dimension == 3
    assert index.examples[1].question_text == "What is on the plate?"

    copy = tmp_path / "copy.json"
    dump_example_index(index, copy)
    assert load_example_index(copy).examples == index.examples


@pytest.mark.parametrize(
    "records",
    [
        [],
        [index_record(dim=3), index_record(dim=4)],
        [{"question": "q", "caption": "c", "answer": "", "question_embedding": [1.0], "image_embedding": [1.0]}],
        [{"question": "q", "caption": "c"}],
        {"not": "a list"},
    ],
)
def test_invalid_indexes(records):
    with pytest.raises(DatasetError):
        parse_example_index(records, "examples.json")


def test_unreadable_index_file(tmp_path):
    with pytest.raises(DatasetError):
        load_example_index(tmp_path / "missing.json")


def test_build_index_from_training_questions(make_hub):
    captioner = StaticCaptioner("a red double decker bus")
    hub = make_hub(captioner=captioner)
    train = [
        QuestionInstance("t1", "What color is the bus?", "img_101", ("Red", "red", "red.", "white")),
        QuestionInstance("t2", "What is on the plate?", "img_102", ("a banana", "banana", "apple")),
        QuestionInstance("t3", "Unlabelled?", "img_103", None),
    ]

    index = asyncio.run(build_example_index(train, hub, source_path="train"))

    assert [ex.answer_text for ex in index.examples] == ["red", "banana"]
    assert [ex.caption_text for ex in index.examples] == ["a red double decker bus"] * 2
    assert sorted(captioner.prompts) == ["What color is the bus?", "What is on the plate?"]
    assert index.dimension == 8
    assert np.linalg.norm(index.examples[0].question_embedding) == pytest.approx(1.0)


def test_build_index_needs_annotations(make_hub):
    with pytest.raises(EmptyIndexError):
        asyncio.run(build_example_index([QuestionInstance("t3", "Unlabelled?", "img_103")], make_hub()))
