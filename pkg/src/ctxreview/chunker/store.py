"""TTL-bounded chunk store.

The reference store lives in process memory.  Anything offering the same
``put / get / scan / set_embedding`` surface (a Redis-backed store, say) can
replace it.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from typing import Callable, Optional, Protocol, Sequence

from ctxreview.models import CodeChunk

DEFAULT_TTL = timedelta(minutes=60)


class StoreError(RuntimeError):
    pass


class StoreUnavailableError(StoreError):
    pass


class ChunkIdCollisionError(StoreError):
    pass


@dataclass(frozen=True)
class ChunkStoreEntry:
    chunk_id: str
    chunk: CodeChunk
    expires_at: datetime
    embedding: Optional[tuple[float, ...]] = None


class ChunkStore(Protocol):
    def put(self, chunk_id: str, entry: ChunkStoreEntry, ttl: timedelta) -> None: ...

    def get(self, chunk_id: str) -> Optional[ChunkStoreEntry]: ...

    def scan(self, repo_id: str) -> list[ChunkStoreEntry]: ...

    def set_embedding(self, chunk_id: str, embedding: Sequence[float]) -> None: ...

    def now(self) -> datetime: ...


class InMemoryChunkStore:
    """Thread-safe in-process store.  ``clock`` returns epoch seconds."""

    def __init__(self, clock: Callable[[], float] = time.time) -> None:
        self._clock = clock
        self._entries: dict[str, ChunkStoreEntry] = {}
        self._lock = threading.Lock()
        self.available = True

    def now(self) -> datetime:
        return datetime.fromtimestamp(self._clock(), tz=timezone.utc)

    def _check(self) -> None:
        if not self.available:
            raise StoreUnavailableError("chunk store backend unavailable")

    def _live(self, chunk_id: str, now: datetime) -> Optional[ChunkStoreEntry]:
        entry = self._entries.get(chunk_id)
        if entry is not None and entry.expires_at <= now:
            del self._entries[chunk_id]
            return None
        return entry

    def put(self, chunk_id: str, entry: ChunkStoreEntry, ttl: timedelta) -> None:
        self._check()
        with self._lock:
            now = self.now()
            current = self._live(chunk_id, now)
            if current is not None and current.chunk.content != entry.chunk.content:
                raise ChunkIdCollisionError(f"chunk-id collision with divergent content: {chunk_id}")
            embedding = entry.embedding
            if embedding is None and current is not None:
                embedding = current.embedding
            self._entries[chunk_id] = replace(entry, expires_at=now + ttl, embedding=embedding)

    def get(self, chunk_id: str) -> Optional[ChunkStoreEntry]:
        self._check()
        with self._lock:
            return self._live(chunk_id, self.now())

    def scan(self, repo_id: str) -> list[ChunkStoreEntry]:
        self._check()
        with self._lock:
            now = self.now()
            live = [e for cid in list(self._entries) if (e := self._live(cid, now)) is not None]
        out = [e for e in live if e.chunk.repo_id == repo_id]
        out.sort(key=lambda e: (e.chunk.file_path, e.chunk.start_line, e.chunk_id))
        return out

    def set_embedding(self, chunk_id: str, embedding: Sequence[float]) -> None:
        self._check()
        with self._lock:
            entry = self._live(chunk_id, self.now())
            if entry is not None:
                self._entries[chunk_id] = replace(entry, embedding=tuple(embedding))

    def __len__(self) -> int:
        with self._lock:
            now = self.now()
            return sum(1 for cid in list(self._entries) if self._live(cid, now) is not None)


def store_chunks(
    chunks: Sequence[CodeChunk], ttl: timedelta | float, store: ChunkStore
) -> int:
    """Put every chunk with the given TTL; storing a chunk again refreshes its expiry."""
    if not isinstance(ttl, timedelta):
        ttl = timedelta(seconds=ttl)
    if ttl <= timedelta(0):
        raise ValueError("ttl must be positive")
    now = store.now()
    for chunk in chunks:
        store.put(chunk.chunk_id, ChunkStoreEntry(chunk.chunk_id, chunk, now + ttl), ttl)
    return len(chunks)
