"""
contracts/base.py
=================
Base backend contract defining the lifecycle every model backend implements.

Backends are plugins living under plugins/<name>/ with a manifest.json.
Each one satisfies one or more capability contracts (generation, caption,
embedding) that all extend BackendBase.

No forward references - this file has zero dependencies.
"""

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


def canonical_json(value: Any) -> str:
    """Keys sorted, UTF-8, no insignificant whitespace; the form cache keys and fixture digests hash."""
    return json.dumps(value, sort_keys=True, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


class BackendStatus(Enum):
    """
    Backend lifecycle states.
    Used by health_check() to report current operational status.
    """

    UNLOADED = "unloaded"  # Not yet initialized
    READY = "ready"  # Fully operational
    ERROR = "error"  # Last initialization or probe failed
    STOPPED = "stopped"  # Cleanly stopped


@dataclass
class BackendManifest:
    """
    Backend metadata structure matching config/manifest_schema.json.

    Attributes:
        name: Unique backend identifier (must match folder name)
        version: Semantic version string (e.g., "1.0.0")
        contracts: Capability contracts implemented ("generation", "caption", "embedding")
        entry_point: Python module name inside the plugin folder
        description: Brief description of backend functionality
        default_config: Configuration merged under the caller's configuration
    """

    name: str
    version: str
    contracts: list[str]
    entry_point: str = "plugin"
    description: str = ""
    default_config: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "version": self.version,
            "contracts": self.contracts,
            "entry_point": self.entry_point,
            "description": self.description,
            "default_config": self.default_config,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BackendManifest":
        """Deserialize manifest from dictionary (e.g., from manifest.json)."""
        return cls(
            name=data["name"],
            version=data["version"],
            contracts=list(data["contracts"]),
            entry_point=data.get("entry_point", "plugin"),
            description=data.get("description", ""),
            default_config=data.get("default_config", {}),
        )


@dataclass
class HealthStatus:
    """
    Health check response structure.

    Attributes:
        status: Current backend status
        message: Human-readable status message
        details: Additional diagnostic info
    """

    status: BackendStatus
    message: str = ""
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "message": self.message,
            "details": self.details,
        }


class BackendBase(ABC):
    """
    Abstract base class for all backends.

    Lifecycle:
        1. __init__() - Backend instantiated by the loader
        2. initialize(config) - Called once to set up clients
        3. [capability methods] - Called by the BackendHub
        4. shutdown() - Called once to release resources

    The backend_id names the backend instance in cache keys, so two backends
    that could answer the same request differently must report different ids.
    """

    def __init__(self) -> None:
        self._status: BackendStatus = BackendStatus.UNLOADED
        self._manifest: BackendManifest | None = None
        self._config: dict[str, Any] = {}

    @abstractmethod
    async def initialize(self, config: dict[str, Any]) -> bool:
        """
        Initialize backend with configuration.

        Args:
            config: Backend configuration (manifest default_config merged with
                    the pipeline's values)

        Returns:
            True if initialization successful.
        """

    @abstractmethod
    async def shutdown(self) -> bool:
        """Release clients and other resources."""

    @abstractmethod
    def health_check(self) -> HealthStatus:
        """Report current status without blocking."""

    @property
    @abstractmethod
    def backend_id(self) -> str:
        """Stable identifier of this backend instance (name + model)."""

    def set_manifest(self, manifest: BackendManifest) -> None:
        self._manifest = manifest

    @property
    def manifest(self) -> BackendManifest | None:
        return self._manifest

    @property
    def status(self) -> BackendStatus:
        return self._status

    @property
    def name(self) -> str:
        return self._manifest.name if self._manifest else type(self).__name__
