"""
Test Script: Backend Hub
========================
Caching, retries, request coalescing and response validation in front of
the model backends.

Usage:
    pytest services/tests/test_backend_hub.py
"""

import asyncio
import math

import pytest

from contracts.base import BackendStatus
from contracts.domain import KnowledgeSource
from contracts.errors import (
    DimensionMismatchError,
    InvalidInputError,
    MalformedResponseError,
    MissingLogprobsError,
    TransportError,
)
from contracts.generation_contract import GenerationRequest, GenerationResponse
from services.backends import build_hub, normalize_vector

from .backend_stubs import ScriptedLLM, StaticCaptioner, TableEmbedder

REQUEST = GenerationRequest(prompt="Question: What animal is red?\nAnswer:", max_tokens=10, want_logprobs=True)


def test_retry_with_exponential_backoff(make_hub):
    llm = ScriptedLLM("red panda", failures=2)
    hub = make_hub(llm=llm)

    response = asyncio.run(hub.generate(REQUEST))

    assert response.text == "red panda"
    assert hub.sleeps == [0.5, 1.0]
    assert hub.calls["generate"] == 3


def test_retry_gives_up_after_three_attempts(make_hub):
    hub = make_hub(llm=ScriptedLLM("x", failures=5))
    with pytest.raises(TransportError):
        asyncio.run(hub.generate(REQUEST))
    assert hub.calls["generate"] == 3
    assert hub.sleeps == [0.5, 1.0]
    assert len(hub.cache) == 0


def test_malformed_responses_fail_fast(make_hub):
    hub = make_hub(llm=ScriptedLLM(error=MalformedResponseError("garbage")))
    with pytest.raises(MalformedResponseError):
        asyncio.run(hub.generate(REQUEST))
    assert hub.calls["generate"] == 1
    assert hub.sleeps == []


def test_second_request_is_a_cache_hit(make_hub):
    llm = ScriptedLLM("red panda")
    hub = make_hub(llm=llm)

    async def run():
        return await hub.generate(REQUEST), await hub.generate(REQUEST)

    first, second = asyncio.run(run())
    assert first == second
    assert len(llm.requests) == 1
    assert hub.cache_hits["generate"] == 1


def test_cache_survives_a_new_hub(make_hub):
    hub = make_hub(llm=ScriptedLLM("red panda"))
    asyncio.run(hub.generate(REQUEST))

    fresh_llm = ScriptedLLM("something else")
    rerun = make_hub(llm=fresh_llm)
    assert asyncio.run(rerun.generate(REQUEST)).text == "red panda"
    assert fresh_llm.requests == []


def test_concurrent_identical_requests_reach_backend_once(make_hub):
    llm = ScriptedLLM("red panda")
    hub = make_hub(llm=llm)

    async def run():
        return await asyncio.gather(*(hub.generate(REQUEST) for _ in range(8)))

    responses = asyncio.run(run())
    assert len(llm.requests) == 1
    assert {r.text for r in responses} == {"red panda"}
    assert hub.cache_hits["generate"] == 7
    assert hub.cache_misses["generate"] == 1
    assert hub._locks == {}


def test_locks_are_released_after_failure(make_hub):
    hub = make_hub(llm=ScriptedLLM(error=TransportError("connection reset")))

    async def run():
        return await asyncio.gather(*(hub.generate(REQUEST) for _ in range(3)), return_exceptions=True)

    results = asyncio.run(run())
    assert all(isinstance(result, TransportError) for result in results)
    assert hub._locks == {}


def test_inflight_cap_bounds_concurrency(make_hub):
    active = 0
    peak = 0

    class SlowLLM(ScriptedLLM):
        async def generate(self, request):
            nonlocal active, peak
            active += 1
            peak = max(peak, active)
            await asyncio.sleep(0.01)
            active -= 1
            return GenerationResponse(request.prompt[-1], (-0.1,))

    hub = make_hub(llm=SlowLLM(), max_inflight=2)

    async def run():
        requests = [GenerationRequest(prompt=f"prompt {i}", max_tokens=5, want_logprobs=True) for i in range(6)]
        await asyncio.gather(*(hub.generate(r) for r in requests))

    asyncio.run(run())
    assert peak == 2


def test_missing_logprobs_is_fatal_and_not_cached(make_hub):
    hub = make_hub(llm=ScriptedLLM(lambda request: GenerationResponse("dog")))
    with pytest.raises(MissingLogprobsError):
        asyncio.run(hub.generate(REQUEST))
    assert len(hub.cache) == 0


def test_logprob_sum_from_fixture_values(make_hub):
    hub = make_hub(llm=ScriptedLLM(lambda request: GenerationResponse("dog", (-0.1, -0.2))))
    response = asyncio.run(hub.generate(REQUEST))
    assert math.fsum(response.token_logprobs) == pytest.approx(-0.3)


def test_caption_records_prompt(make_hub):
    captioner = StaticCaptioner("a red flower in a garden")
    hub = make_hub(captioner=captioner)
    caption = asyncio.run(hub.caption("img_001", "What's the color of the flower?"))
    assert caption.text == "a red flower in a garden"
    assert caption.prompt_used == "What's the color of the flower?"
    assert not caption.omitted


def test_caption_input_validation(make_hub):
    hub = make_hub(captioner=StaticCaptioner("   "))
    with pytest.raises(InvalidInputError):
        asyncio.run(hub.caption("", "prompt"))
    with pytest.raises(InvalidInputError):
        asyncio.run(hub.caption("img_001", "  "))
    with pytest.raises(MalformedResponseError):
        asyncio.run(hub.caption("img_001", "prompt"))


def test_local_captions_deduplicated_and_tagged(make_hub):
    captioner = StaticCaptioner(local=["a red flower", " a red flower ", "green leaves", "", "a fence"])
    hub = make_hub(captioner=captioner)
    items = asyncio.run(hub.local_captions("img_001", 50))
    assert [item.text for item in items] == ["a red flower", "green leaves", "a fence"]
    assert {item.source for item in items} == {KnowledgeSource.LOCAL_CAPTION}


def test_zero_local_captions_is_an_error(make_hub):
    hub = make_hub(captioner=StaticCaptioner(local=[]))
    with pytest.raises(MalformedResponseError):
        asyncio.run(hub.local_captions("img_001", 5))
    with pytest.raises(InvalidInputError):
        asyncio.run(hub.local_captions("img_001", 0))


def test_embeddings_are_normalized(make_hub):
    hub = make_hub(embedder=TableEmbedder({"roses": [3.0, 4.0]}, dimension=2))
    response = asyncio.run(hub.embed_text("roses"))
    assert response.vector == pytest.approx((0.6, 0.8))
    assert response.dimension == 2


def test_embedding_dimension_enforced(make_hub):
    embedder = TableEmbedder({"short": [1.0, 0.0], "long": [1.0, 0.0, 0.0]}, dimension=2)
    hub = make_hub(embedder=embedder)
    asyncio.run(hub.embed_text("short"))
    with pytest.raises(DimensionMismatchError):
        asyncio.run(hub.embed_text("long"))


def test_empty_embedding_inputs(make_hub):
    hub = make_hub()
    with pytest.raises(InvalidInputError):
        asyncio.run(hub.embed_text("  "))
    with pytest.raises(InvalidInputError):
        asyncio.run(hub.embed_image(""))


@pytest.mark.parametrize("values", [[], [0.0, 0.0], [float("nan"), 1.0]])
def test_normalize_rejects_degenerate_vectors(values):
    with pytest.raises(MalformedResponseError):
        normalize_vector(values, None)


def test_stats_report_calls_and_hits(make_hub):
    hub = make_hub()

    async def run():
        await hub.embed_text("roses")
        await hub.embed_text("roses")
        await hub.embed_image("img_001")

    asyncio.run(run())
    stats = hub.stats()
    assert stats["calls"]["embed_text"] == 1
    assert stats["cache_hits"]["embed_text"] == 1
    assert stats["calls"]["embed_image"] == 1
    assert stats["cache_records"] == 2


def test_hit_rate_counts_each_request_once(make_hub):
    hub = make_hub(llm=ScriptedLLM("red panda"))
    assert hub.cache_hit_rate() is None

    async def run():
        await hub.generate(REQUEST)
        await hub.generate(REQUEST)

    asyncio.run(run())
    assert hub.cache_hit_rate() == 0.5
    assert hub.stats()["cache_misses"]["generate"] == 1


def test_build_hub_from_mock_config(make_config):
    async def run():
        hub = await build_hub(make_config())
        async with hub:
            health = hub.health()
            caption = await hub.caption("101", "What object is shown in the image?")
        return health, caption

    health, caption = asyncio.run(run())
    assert {status.status for status in health.values()} == {BackendStatus.READY}
    assert caption.text == "a white surfboard on a sandy beach"
