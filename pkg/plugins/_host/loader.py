"""
plugins/_host/loader.py
=======================
Dynamic backend loading using importlib.

Imports plugins.<name>.<entry_point>, finds the class implementing the
requested capability contract, merges the manifest's default_config under the
caller's values and initializes the instance.

Dependencies:
    - contracts/base.py (BackendBase, BackendManifest)
    - discovery.py (BackendDiscovery)
"""

import importlib
import inspect
import logging
from dataclasses import dataclass
from types import ModuleType
from typing import Any, TypeVar

from contracts.base import BackendBase, BackendManifest
from contracts.caption_contract import CaptionContract
from contracts.embedding_contract import EmbeddingContract
from contracts.errors import BackendLoadError
from contracts.generation_contract import GenerationContract

from .discovery import BackendDiscovery

logger = logging.getLogger(__name__)

# Manifest contract name -> abstract contract class
CONTRACTS: dict[str, type[BackendBase]] = {
    "generation": GenerationContract,
    "caption": CaptionContract,
    "embedding": EmbeddingContract,
}

ContractT = TypeVar("ContractT", bound=BackendBase)


@dataclass
class LoadedBackend:
    """A loaded and initialized backend instance."""

    name: str
    instance: BackendBase
    manifest: BackendManifest
    module: ModuleType

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "version": self.manifest.version,
            "contracts": self.manifest.contracts,
            "backend_id": self.instance.backend_id,
            "status": self.instance.status.value,
        }


def find_backend_class(module: ModuleType, contract: type[BackendBase]) -> type[BackendBase] | None:
    """
    Find the concrete class implementing a contract in an imported module.

    Classes ending in "Plugin" win; otherwise the first concrete subclass.
    """
    candidates = [
        obj
        for name, obj in inspect.getmembers(module, inspect.isclass)
        if obj.__module__ == module.__name__ and issubclass(obj, contract) and not inspect.isabstract(obj)
    ]
    for candidate in candidates:
        if candidate.__name__.endswith("Plugin"):
            return candidate
    return candidates[0] if candidates else None


class BackendLoader:
    """
    Loads backends on demand, one shared instance per plugin name.

    A plugin filling several roles (the fixture backend serves generation,
    captioning and embedding) is instantiated and initialized only once.

    Usage:
        loader = BackendLoader()
        llm = await loader.load("llm_chat", GenerationContract, {"endpoint": ...})
        ...
        await loader.shutdown_all()
    """

    def __init__(self, discovery: BackendDiscovery | None = None):
        self.discovery = discovery or BackendDiscovery()
        self._loaded: dict[str, LoadedBackend] = {}

    @property
    def loaded(self) -> dict[str, LoadedBackend]:
        return dict(self._loaded)

    def _import(self, name: str) -> tuple[BackendManifest, ModuleType]:
        discovered = self.discovery.find(name)
        if discovered is None:
            raise BackendLoadError(f"Unknown backend: {name}", backend=name)
        if not discovered.valid:
            raise BackendLoadError(f"Backend {name} has an invalid manifest: {discovered.errors}", backend=name)

        manifest = BackendManifest.from_dict(discovered.manifest)
        module_name = f"plugins.{name}.{manifest.entry_point}"
        try:
            module = importlib.import_module(module_name)
        except ImportError as e:
            raise BackendLoadError(f"Failed to import {module_name}: {e}", backend=name) from e
        return manifest, module

    async def load(self, name: str, contract: type[ContractT], config: dict[str, Any]) -> ContractT:
        """
        Return the initialized backend `name`, checked against `contract`.

        Raises:
            BackendLoadError: unknown plugin, invalid manifest, import failure,
                missing contract or failed initialization
        """
        contract_name = next((key for key, cls in CONTRACTS.items() if cls is contract), contract.__name__)

        if name in self._loaded:
            loaded = self._loaded[name]
            if not isinstance(loaded.instance, contract):
                raise BackendLoadError(f"Backend {name} does not implement {contract_name}", backend=name)
            return loaded.instance

        manifest, module = self._import(name)
        if contract_name not in manifest.contracts:
            raise BackendLoadError(f"Backend {name} does not declare the {contract_name} contract", backend=name)

        backend_class = find_backend_class(module, contract)
        if backend_class is None:
            raise BackendLoadError(f"No {contract_name} implementation found in {module.__name__}", backend=name)

        instance = backend_class()
        instance.set_manifest(manifest)
        merged = {**manifest.default_config, **{k: v for k, v in config.items() if v is not None}}
        try:
            ok = await instance.initialize(merged)
        except BackendLoadError:
            raise
        except Exception as e:
            raise BackendLoadError(f"Backend {name} failed to initialize: {e}", backend=name) from e
        if not ok:
            raise BackendLoadError(f"Backend {name} failed to initialize", backend=name)

        self._loaded[name] = LoadedBackend(name=name, instance=instance, manifest=manifest, module=module)
        logger.info(f"Loaded backend: {name} (v{manifest.version}) as {instance.backend_id}")
        return instance  # type: ignore[return-value]

    async def shutdown_all(self) -> None:
        """Shut down every loaded backend, logging (not raising) failures."""
        for name, loaded in list(self._loaded.items()):
            try:
                await loaded.instance.shutdown()
            except Exception as e:
                logger.warning(f"Backend {name} failed to shut down cleanly: {e}")
        self._loaded.clear()
