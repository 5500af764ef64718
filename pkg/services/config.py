"""
services/config.py
==================
Pipeline configuration: one flat YAML/JSON document validated by pydantic.

Keys are exactly the PipelineConfig field names. Unspecified fields take the
defaults below (n=9, m=10, q=5, r=10, 50 local captions). Backend endpoints
and credentials may also come from the environment (a .env file is honoured).

Usage:
    cfg = load_config("cfg.yaml")
    cfg = apply_overrides(cfg, {"q_ensemble": 1})
    dump_config(cfg, run_dir / "config.json", redact=True)
"""

import json
import os
from pathlib import Path
from typing import Any

import yaml
from dotenv import find_dotenv, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveFloat, PositiveInt, ValidationError
from pydantic import ValidationInfo, field_validator

from contracts.domain import Ablation, SelectorStrategy
from contracts.errors import ConfigError

# Environment variables consulted when the file leaves a field unset.
ENV_FALLBACKS = {
    "llm_endpoint": "DKA_LLM_ENDPOINT",
    "llm_api_key": "DKA_LLM_API_KEY",
    "caption_endpoint": "DKA_CAPTION_ENDPOINT",
    "embed_endpoint": "DKA_EMBED_ENDPOINT",
}

# HTTP backends and the endpoint field each one needs.
ENDPOINT_FIELDS = {
    "llm_chat": "llm_endpoint",
    "caption_chat": "caption_endpoint",
    "embed_http": "embed_endpoint",
}

MOCK_BACKEND = "mock_fixture"


class PipelineConfig(BaseModel):
    """Validated, immutable pipeline configuration."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    # Hyperparameters
    n_selected_knowledge: PositiveInt = 9
    m_examples: PositiveInt = 10
    q_ensemble: PositiveInt = 5
    r_retrieved: PositiveInt = 10
    local_caption_count: PositiveInt = 50

    # Variants
    ablation: Ablation = Ablation.NONE
    selector_strategy: SelectorStrategy = SelectorStrategy.SIMILARITY
    random_seed: NonNegativeInt | None = Field(default=None, validate_default=True)
    length_normalize: bool = False
    strict_vqa_accuracy: bool = False

    # Backends
    llm_backend: str = "llm_chat"
    caption_backend: str = "caption_chat"
    embed_backend: str = "embed_http"
    mock_fixtures: str | None = None

    llm_endpoint: str | None = None
    llm_api_key: str | None = None
    llm_model: str = "gpt-3.5-turbo"
    decompose_model: str | None = None
    elicit_model: str | None = None
    answer_model: str | None = None

    caption_endpoint: str | None = None
    caption_api_key: str | None = None
    caption_model: str = "promptcap"
    local_caption_temperature: float = Field(default=1.0, ge=0.0)

    embed_endpoint: str | None = None
    embed_api_key: str | None = None
    embed_model: str = "blip-itm"
    embed_dimension: PositiveInt | None = None

    image_root: str | None = None
    image_pattern: str = "{image_ref}"

    # Wire behaviour
    request_timeout_s: PositiveFloat = 60.0
    retry_attempts: PositiveInt = 3
    retry_backoff_s: float = Field(default=0.5, ge=0.0)
    max_tokens_decompose: PositiveInt = 256
    max_tokens_knowledge: PositiveInt = 64
    max_tokens_answer: PositiveInt = 10

    # Execution
    cache_dir: str = ".dka_cache"
    workers: PositiveInt = 4
    max_inflight: PositiveInt = 8
    trace: bool = False

    @field_validator("random_seed")
    @classmethod
    def _seed_required_for_random(cls, value: int | None, info: ValidationInfo) -> int | None:
        if value is None and info.data.get("selector_strategy") is SelectorStrategy.RANDOM:
            raise ValueError("random_seed is required when selector_strategy is 'random'")
        return value

    def model_for(self, stage: str) -> str:
        """Model id for a generation stage ("decompose", "elicit", "answer")."""
        override = getattr(self, f"{stage}_model")
        return override or self.llm_model

    def backend_for(self, role: str) -> str:
        """Backend plugin name for a role ("llm", "caption", "embed")."""
        if self.mock_fixtures is not None:
            return MOCK_BACKEND
        return str(getattr(self, f"{role}_backend"))

    def require_endpoints(self) -> None:
        """Raise ConfigError naming the first endpoint a configured HTTP backend lacks."""
        for role in ("llm", "caption", "embed"):
            endpoint_field = ENDPOINT_FIELDS.get(self.backend_for(role))
            if endpoint_field and not getattr(self, endpoint_field):
                env_name = ENV_FALLBACKS.get(endpoint_field)
                hint = f" (or set {env_name})" if env_name else ""
                raise ConfigError(f"Missing required backend endpoint: {endpoint_field}{hint}", key_path=endpoint_field)


def _to_config_error(error: ValidationError) -> ConfigError:
    first = error.errors()[0]
    key_path = ".".join(str(part) for part in first["loc"])
    messages = [f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in error.errors()]
    return ConfigError(f"Invalid configuration: {'; '.join(messages)}", key_path=key_path)


def build_config(data: dict[str, Any]) -> PipelineConfig:
    """Validate a raw mapping, converting pydantic errors into ConfigError."""
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise _to_config_error(e) from e


def _apply_env(data: dict[str, Any]) -> dict[str, Any]:
    load_dotenv(find_dotenv(usecwd=True))
    merged = dict(data)
    for key, env_name in ENV_FALLBACKS.items():
        if merged.get(key) is None and os.getenv(env_name):
            merged[key] = os.environ[env_name]
    # OpenAI-compatible deployments usually share one key
    for key in ("caption_api_key", "embed_api_key"):
        if merged.get(key) is None and merged.get("llm_api_key"):
            merged[key] = merged["llm_api_key"]
    return merged


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse a YAML (or JSON) config body; an empty body yields {}."""
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"Config file not found: {config_path}")
    try:
        with open(config_path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse config file {config_path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {config_path} must hold a key/value mapping")
    return data


def load_config(path: str | Path | None = None, require_endpoints: bool = True) -> PipelineConfig:
    """
    Load and fully validate a pipeline configuration.

    Args:
        path: Config file; None means defaults plus environment
        require_endpoints: Fail when an HTTP backend has no endpoint

    Raises:
        ConfigError: parse failure, invalid value or missing endpoint, naming the key
    """
    data = read_config_file(path) if path is not None else {}
    cfg = build_config(_apply_env(data))
    if require_endpoints:
        cfg.require_endpoints()
    return cfg


def apply_overrides(cfg: PipelineConfig, overrides: dict[str, Any]) -> PipelineConfig:
    """Return a re-validated copy with the non-None overrides applied."""
    updates = {key: value for key, value in overrides.items() if value is not None}
    if not updates:
        return cfg
    return build_config({**cfg.model_dump(), **updates})


def dump_config(cfg: PipelineConfig, path: str | Path, redact: bool = False) -> None:
    """Write the configuration as JSON; redact blanks credentials."""
    data = cfg.model_dump(mode="json")
    if redact:
        for key in ("llm_api_key", "caption_api_key", "embed_api_key"):
            if data.get(key):
                data[key] = "***"
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
