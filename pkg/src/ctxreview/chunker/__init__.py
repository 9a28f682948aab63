"""Ephemeral checkout, AST chunking and the TTL chunk store."""

from ctxreview.chunker.chunking import (
    DEFAULT_MAX_CHUNK_LINES,
    chunk_source,
    language_of,
    make_chunk_id,
    semantic_chunk,
    split_lines,
)
from ctxreview.chunker.store import (
    ChunkIdCollisionError,
    ChunkStore,
    ChunkStoreEntry,
    InMemoryChunkStore,
    StoreUnavailableError,
    store_chunks,
)
from ctxreview.chunker.workspace import (
    CloneError,
    WorkspaceDisposedError,
    WorkspaceHandle,
    clone_ephemeral,
)
