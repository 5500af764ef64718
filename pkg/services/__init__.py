"""
services/__init__.py
====================
Pipeline stages and the facades they share.

- PipelineConfig / load_config: validated run configuration
- ResponseCache: content-addressed on-disk response cache
- BackendHub / build_hub: cached, retried access to the model backends

Stage modules (decompose, acquire, rank, answer, evaluation, pipeline) are
imported directly by their callers.
"""

from .backends import BackendHub, build_hub
from .cache import CacheRecord, ResponseCache
from .config import PipelineConfig, load_config

__all__ = ["BackendHub", "build_hub", "CacheRecord", "ResponseCache", "PipelineConfig", "load_config"]
