"""
services/cache.py
=================
Content-addressed response cache for backend calls.

One JSON file per record under cache_dir, named by the SHA-256 digest of the
backend id and the canonical request. Identical requests therefore map to the
same file, which makes reruns free and lets an interrupted run resume.

Records are written to a temporary file and renamed into place, so a reader
never observes a half-written record and two writers of the same key leave
one valid file behind.
"""

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from contracts.base import canonical_json

logger = logging.getLogger(__name__)


def cache_key(backend_id: str, request_canonical: str) -> str:
    """Hex digest identifying one request to one backend."""
    return hashlib.sha256(f"{backend_id}\n{request_canonical}".encode()).hexdigest()


@dataclass(frozen=True)
class CacheRecord:
    """
    A stored backend response.

    Attributes:
        key: cache_key(backend_id, request_canonical)
        request_canonical: Canonical serialized request
        response: Serialized response payload
        backend_id: Backend instance that produced the response
        created_at: ISO-8601 UTC timestamp
    """

    key: str
    request_canonical: str
    response: dict[str, Any]
    backend_id: str
    created_at: str

    @classmethod
    def create(cls, backend_id: str, request_canonical: str, response: dict[str, Any]) -> "CacheRecord":
        return cls(
            key=cache_key(backend_id, request_canonical),
            request_canonical=request_canonical,
            response=response,
            backend_id=backend_id,
            created_at=datetime.now(timezone.utc).isoformat(),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "key": self.key,
            "request_canonical": self.request_canonical,
            "response": self.response,
            "backend_id": self.backend_id,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CacheRecord":
        return cls(
            key=data["key"],
            request_canonical=data["request_canonical"],
            response=data["response"],
            backend_id=data["backend_id"],
            created_at=data["created_at"],
        )


class ResponseCache:
    """
    On-disk cache of CacheRecords.

    Usage:
        cache = ResponseCache(".dka_cache")
        record = cache.get(key)
        if record is None:
            cache.put(CacheRecord.create(backend_id, canonical, payload))
    """

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def path_for(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def get(self, key: str) -> CacheRecord | None:
        """Return the stored record, or None on a miss or unreadable file."""
        path = self.path_for(key)
        if not path.exists():
            return None
        try:
            with open(path, encoding="utf-8") as f:
                record = CacheRecord.from_dict(json.load(f))
        except (OSError, ValueError, KeyError) as e:
            logger.warning(f"Ignoring unreadable cache record {path.name}: {e}")
            return None
        if record.key != key:
            logger.warning(f"Cache record {path.name} carries foreign key {record.key}")
            return None
        return record

    def put(self, record: CacheRecord) -> None:
        """Atomically write a record; an existing record for the key is replaced."""
        fd, tmp_name = tempfile.mkstemp(dir=self.cache_dir, prefix=".tmp-", suffix=".part")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                f.write(canonical_json(record.to_dict()))
            os.replace(tmp_name, self.path_for(record.key))
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise

    def __len__(self) -> int:
        return sum(1 for _ in self.cache_dir.glob("*.json"))
