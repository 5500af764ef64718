"""
plugins/_host/discovery.py
==========================
Backend discovery: scans plugins/ for manifest.json files and validates each
one against config/manifest_schema.json.

Dependencies:
    - config/manifest_schema.json (manifest validation schema)

This module is imported by:
    - loader.py
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

logger = logging.getLogger(__name__)

PLUGINS_DIR = Path(__file__).resolve().parent.parent
SCHEMA_PATH = PLUGINS_DIR.parent / "config" / "manifest_schema.json"


@dataclass
class DiscoveredBackend:
    """
    A backend plugin found on disk, before loading.

    Attributes:
        path: Absolute path to plugin folder
        manifest: Parsed manifest.json contents
        name: Backend name from manifest
        valid: Whether the manifest passed schema validation
        errors: Validation errors if not valid
    """

    path: Path
    manifest: dict[str, Any]
    name: str
    valid: bool = True
    errors: list[str] = field(default_factory=list)

    @property
    def contracts(self) -> list[str]:
        return list(self.manifest.get("contracts", []))

    @property
    def entry_point(self) -> str:
        return str(self.manifest.get("entry_point", "plugin"))

    def to_dict(self) -> dict[str, Any]:
        return {
            "path": str(self.path),
            "name": self.name,
            "contracts": self.contracts,
            "entry_point": self.entry_point,
            "valid": self.valid,
            "errors": self.errors,
        }


class BackendDiscovery:
    """
    Filesystem scan of the plugins directory.

    Folders starting with "_" or "." (the host itself, tests) are skipped.

    Usage:
        discovery = BackendDiscovery()
        for backend in discovery.scan():
            if backend.valid:
                print(f"Found: {backend.name} {backend.contracts}")
    """

    def __init__(self, plugins_dir: str | Path = PLUGINS_DIR, schema_path: str | Path = SCHEMA_PATH):
        self.plugins_dir = Path(plugins_dir).resolve()
        with open(schema_path, encoding="utf-8") as f:
            self._schema = json.load(f)
        self._validator = jsonschema.Draft7Validator(self._schema)

    def validate_manifest(self, manifest: Any, folder_name: str) -> list[str]:
        """Return schema errors plus a folder/name mismatch, if any."""
        errors = [
            f"{'.'.join(str(p) for p in error.absolute_path) or '<root>'}: {error.message}"
            for error in sorted(self._validator.iter_errors(manifest), key=lambda e: list(e.absolute_path))
        ]
        if isinstance(manifest, dict) and manifest.get("name") not in (None, folder_name):
            errors.append(f"Manifest name '{manifest.get('name')}' does not match folder '{folder_name}'")
        return errors

    def inspect(self, plugin_path: Path) -> DiscoveredBackend | None:
        """Parse one plugin folder; None when it holds no manifest."""
        manifest_path = plugin_path / "manifest.json"
        if not manifest_path.exists():
            return None
        try:
            with open(manifest_path, encoding="utf-8") as f:
                manifest = json.load(f)
        except json.JSONDecodeError as e:
            return DiscoveredBackend(plugin_path, {}, plugin_path.name, valid=False, errors=[f"Invalid JSON: {e}"])

        errors = self.validate_manifest(manifest, plugin_path.name)
        if errors:
            logger.warning(f"Invalid manifest in {plugin_path.name}: {errors}")
        return DiscoveredBackend(
            path=plugin_path,
            manifest=manifest if isinstance(manifest, dict) else {},
            name=plugin_path.name,
            valid=not errors,
            errors=errors,
        )

    def scan(self) -> list[DiscoveredBackend]:
        """Return every plugin folder holding a manifest, sorted by name."""
        if not self.plugins_dir.is_dir():
            logger.warning(f"Plugins directory not found: {self.plugins_dir}")
            return []

        found = []
        for child in sorted(self.plugins_dir.iterdir()):
            if not child.is_dir() or child.name.startswith(("_", ".")):
                continue
            discovered = self.inspect(child)
            if discovered is not None:
                found.append(discovered)

        logger.debug(f"Discovered {len(found)} backends in {self.plugins_dir}")
        return found

    def find(self, name: str) -> DiscoveredBackend | None:
        """Look up one backend by folder name."""
        if name.startswith(("_", ".")):
            return None
        return self.inspect(self.plugins_dir / name)


def discover_backends(plugins_dir: str | Path = PLUGINS_DIR) -> list[DiscoveredBackend]:
    """Convenience wrapper: scan and return only valid backends."""
    return [backend for backend in BackendDiscovery(plugins_dir).scan() if backend.valid]
