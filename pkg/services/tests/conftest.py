"""Shared fixtures for the pipeline tests."""

from pathlib import Path

import pytest

from services.backends import BackendHub
from services.cache import ResponseCache
from services.config import build_config

from .backend_stubs import ScriptedLLM, StaticCaptioner, TableEmbedder

FIXTURES = Path(__file__).resolve().parent / "fixtures"
MINI_DIR = FIXTURES / "mini"


@pytest.fixture
def make_hub(tmp_path):
    """Factory for a BackendHub over stub backends; recorded backoff delays land in hub.sleeps."""

    def factory(llm=None, captioner=None, embedder=None, **kwargs):
        sleeps = []

        async def record_sleep(delay):
            sleeps.append(delay)

        hub = BackendHub(
            llm or ScriptedLLM(),
            captioner or StaticCaptioner(),
            embedder or TableEmbedder(),
            ResponseCache(tmp_path / "cache"),
            sleep=record_sleep,
            **kwargs,
        )
        hub.sleeps = sleeps
        return hub

    return factory


@pytest.fixture
def make_config(tmp_path):
    """Factory for a PipelineConfig over the miniature fixture dataset."""

    def factory(**overrides):
        data = {"mock_fixtures": str(MINI_DIR / "fixtures.json"), "cache_dir": str(tmp_path / "cache")}
        data.update(overrides)
        return build_config(data)

    return factory
