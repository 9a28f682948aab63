"""Lexical and semantic search over stored chunks, merged by set union.

The query is the PR diff: identifiers are pulled from every hunk line
(context lines included, since they name the function being changed), and
the semantic query text is the concatenated hunk body.
"""

from __future__ import annotations

import hashlib
import keyword
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import httpx

from ctxreview.chunker.store import ChunkStore, ChunkStoreEntry
from ctxreview.integrations.diff import UnifiedDiff
from ctxreview.models import CodeChunk

logger = logging.getLogger(__name__)

DEFAULT_TOP_K = 25
DEFAULT_MIN_SIMILARITY = 0.35
DEFAULT_BUDGET_TOKENS = 24000
CHARS_PER_TOKEN = 4

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_CAMEL_RE = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+")
STOPWORDS = frozenset(keyword.kwlist) | {
    "self", "cls", "none", "true", "false", "the", "and", "or", "of", "to", "in",
    "is", "it", "for", "if", "on", "at", "by", "an", "be", "as", "this", "that",
}


class EmbedderError(RuntimeError):
    pass


class SemanticSearchError(RuntimeError):
    pass


def split_identifier(identifier: str) -> list[str]:
    """``process_order`` -> [process, order]; ``HTTPServerError`` -> [http, server, error]."""
    parts = []
    for piece in identifier.split("_"):
        parts.extend(p.lower() for p in _CAMEL_RE.findall(piece))
    return parts


def terms(text: str) -> list[str]:
    """All identifier sub-terms of ``text`` in order, stopwords and digits removed."""
    out = []
    for ident in _IDENT_RE.findall(text):
        for t in split_identifier(ident):
            if len(t) > 1 and not t.isdigit() and t not in STOPWORDS:
                out.append(t)
    return out


def estimate_tokens(text: str, chars_per_token: float = CHARS_PER_TOKEN) -> int:
    return math.ceil(len(text) / chars_per_token)


@dataclass(frozen=True)
class RetrievalQuery:
    diff: UnifiedDiff
    extracted_identifiers: list[str]
    query_text: str


def build_query(diff: UnifiedDiff) -> RetrievalQuery:
    text = diff.hunk_text()
    return RetrievalQuery(diff, list(dict.fromkeys(terms(text))), text)


@dataclass(frozen=True)
class Hit:
    chunk_id: str
    score: float
    chunk: CodeChunk


@dataclass(frozen=True)
class ScoredChunkSet:
    source: str  # "lexical" or "semantic"
    hits: tuple[Hit, ...] = ()

    def ids(self) -> list[str]:
        return [h.chunk_id for h in self.hits]


def _rank_key(h: Hit):
    return (-h.score, h.chunk.file_path, h.chunk.start_line, h.chunk_id)


def is_part_of_change(chunk: CodeChunk, diff: UnifiedDiff) -> bool:
    """True when every line of the chunk was added by the diff."""
    f = diff.file(chunk.file_path)
    if f is None:
        return False
    added = f.added_lines()
    return all(n in added for n in range(chunk.start_line, chunk.end_line + 1))


def _candidates(query: RetrievalQuery, store: ChunkStore, repo_id: str) -> list[ChunkStoreEntry]:
    return [e for e in store.scan(repo_id) if not is_part_of_change(e.chunk, query.diff)]


def lexical_search(
    query: RetrievalQuery, store: ChunkStore, top_k: int = DEFAULT_TOP_K, *, repo_id: str
) -> ScoredChunkSet:
    """Rank chunks by tf-idf weighted overlap with the query's identifier terms.

    score(c) = sum over query terms t of tf(t, c) * ln(1 + N / df(t)), with N
    the number of candidate chunks and df(t) the candidates containing t.
    """
    if top_k <= 0:
        raise ValueError("top_k must be positive")
    if not query.extracted_identifiers:
        return ScoredChunkSet("lexical")
    entries = _candidates(query, store, repo_id)
    if not entries:
        return ScoredChunkSet("lexical")
    qterms = set(query.extracted_identifiers)
    counts = []
    df: dict[str, int] = {}
    for e in entries:
        tf: dict[str, int] = {}
        for t in terms(e.chunk.content):
            if t in qterms:
                tf[t] = tf.get(t, 0) + 1
        counts.append(tf)
        for t in tf:
            df[t] = df.get(t, 0) + 1
    n = len(entries)
    hits = []
    for e, tf in zip(entries, counts):
        # fsum keeps equal term multisets at bit-identical scores regardless of order
        score = math.fsum(c * math.log(1 + n / df[t]) for t, c in tf.items())
        if score > 0:
            hits.append(Hit(e.chunk_id, score, e.chunk))
    hits.sort(key=_rank_key)
    return ScoredChunkSet("lexical", tuple(hits[:top_k]))


class Embedder(Protocol):
    dim: int

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


class HashingEmbedder:
    """Deterministic bag-of-identifier-terms embedding via feature hashing."""

    def __init__(self, dim: int = 512) -> None:
        self.dim = dim

    def _bucket(self, term: str) -> int:
        return int.from_bytes(hashlib.blake2b(term.encode(), digest_size=8).digest(), "big") % self.dim

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        out = []
        for text in texts:
            counts: dict[int, int] = {}
            for t in terms(text):
                b = self._bucket(t)
                counts[b] = counts.get(b, 0) + 1
            vec = [0.0] * self.dim
            for b, c in counts.items():
                vec[b] = 1.0 + math.log(c)
            norm = math.sqrt(sum(v * v for v in vec))
            out.append([v / norm for v in vec] if norm else vec)
        return out


class HttpEmbedder:
    """Adapter for an OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(self, base_url: str, model: str, api_key: str, dim: int, timeout: float = 30.0) -> None:
        self.dim = dim
        self.model = model
        self._http = httpx.Client(
            base_url=base_url.rstrip("/"), headers={"Authorization": f"Bearer {api_key}"}, timeout=timeout
        )

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        try:
            resp = self._http.post("/embeddings", json={"model": self.model, "input": list(texts)})
            resp.raise_for_status()
            data = sorted(resp.json()["data"], key=lambda d: d["index"])
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise EmbedderError(str(exc)) from exc
        return [d["embedding"] for d in data]


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0 or nb == 0:
        return 0.0
    # rounding keeps identical texts at exactly 1.0
    return round(max(-1.0, min(1.0, dot / (na * nb))), 12)


def semantic_search(
    query: RetrievalQuery,
    store: ChunkStore,
    embedder: Embedder,
    top_k: int = DEFAULT_TOP_K,
    min_similarity: float = DEFAULT_MIN_SIMILARITY,
    *,
    repo_id: str,
) -> ScoredChunkSet:
    """Chunks whose embedding is within ``min_similarity`` cosine of the query text.

    Missing chunk embeddings are computed in one batch and cached in the store.
    """
    if top_k <= 0:
        raise ValueError("top_k must be positive")
    if not 0.0 <= min_similarity <= 1.0:
        raise ValueError("min_similarity must lie in [0, 1]")
    entries = _candidates(query, store, repo_id)
    if not entries or not query.query_text.strip():
        return ScoredChunkSet("semantic")
    missing = [e for e in entries if e.embedding is None]
    try:
        fresh = embedder.embed([e.chunk.content for e in missing]) if missing else []
        (qvec,) = embedder.embed([query.query_text])
    except EmbedderError as exc:
        raise SemanticSearchError(f"embedder failed: {exc}") from exc
    except Exception as exc:  # embedders are pluggable; surface any failure typed
        raise SemanticSearchError(f"embedder failed: {exc!r}") from exc
    vectors = {}
    for e, vec in zip(missing, fresh):
        store.set_embedding(e.chunk_id, vec)
        vectors[e.chunk_id] = vec
    hits = []
    for e in entries:
        vec = vectors.get(e.chunk_id, e.embedding)
        sim = cosine(qvec, vec)
        if sim >= min_similarity and sim > 0:
            hits.append(Hit(e.chunk_id, sim, e.chunk))
    hits.sort(key=_rank_key)
    return ScoredChunkSet("semantic", tuple(hits[:top_k]))


def _normalized(hits: Sequence[Hit]) -> dict[str, float]:
    if not hits:
        return {}
    lo = min(h.score for h in hits)
    hi = max(h.score for h in hits)
    if hi == lo:
        return {h.chunk_id: 1.0 for h in hits}
    return {h.chunk_id: (h.score - lo) / (hi - lo) for h in hits}


def merged_ranking(lexical: ScoredChunkSet, semantic: ScoredChunkSet) -> list[Hit]:
    """Union by chunk-id with min-max normalized scores; a shared chunk keeps its max."""
    best: dict[str, Hit] = {}
    for result in (lexical, semantic):
        chunks = {h.chunk_id: h.chunk for h in result.hits}
        for cid, score in _normalized(result.hits).items():
            if cid not in best or score > best[cid].score:
                best[cid] = Hit(cid, score, chunks[cid])
    return sorted(best.values(), key=_rank_key)


def truncate_to_budget(
    ranked: Sequence[Hit], budget_tokens: int, chars_per_token: float = CHARS_PER_TOKEN
) -> list[Hit]:
    """Longest prefix of ``ranked`` whose estimated token total fits the budget."""
    out, used = [], 0
    for h in ranked:
        cost = estimate_tokens(h.chunk.content, chars_per_token)
        if used + cost > budget_tokens:
            break
        out.append(h)
        used += cost
    return out


def merge_relevant(
    lexical: ScoredChunkSet,
    semantic: ScoredChunkSet,
    budget_tokens: int = DEFAULT_BUDGET_TOKENS,
    *,
    chars_per_token: float = CHARS_PER_TOKEN,
) -> list[CodeChunk]:
    if budget_tokens <= 0:
        raise ValueError("budget_tokens must be positive")
    ranked = merged_ranking(lexical, semantic)
    return [h.chunk for h in truncate_to_budget(ranked, budget_tokens, chars_per_token)]


@dataclass
class RetrievalSettings:
    top_k: int = DEFAULT_TOP_K
    min_similarity: float = DEFAULT_MIN_SIMILARITY
    budget_tokens: int = DEFAULT_BUDGET_TOKENS
    chars_per_token: float = CHARS_PER_TOKEN


@dataclass
class RetrievalOutcome:
    chunks: list[CodeChunk]
    lexical: ScoredChunkSet
    semantic: ScoredChunkSet
    warnings: list[str] = field(default_factory=list)
    degraded: bool = False


def retrieve_relevant(
    query: RetrievalQuery,
    store: ChunkStore,
    embedder: Optional[Embedder],
    settings: RetrievalSettings,
    *,
    repo_id: str,
) -> RetrievalOutcome:
    """Run both searches concurrently and merge; an embedder failure degrades to lexical-only."""
    warnings: list[str] = []
    with ThreadPoolExecutor(max_workers=2) as pool:
        lex_f = pool.submit(lexical_search, query, store, settings.top_k, repo_id=repo_id)
        sem_f = None
        if embedder is not None:
            sem_f = pool.submit(
                semantic_search, query, store, embedder, settings.top_k, settings.min_similarity, repo_id=repo_id
            )
        lexical = lex_f.result()
        semantic = ScoredChunkSet("semantic")
        degraded = False
        if sem_f is not None:
            try:
                semantic = sem_f.result()
            except SemanticSearchError as exc:
                degraded = True
                warnings.append(f"semantic search degraded to lexical-only: {exc}")
    chunks = merge_relevant(lexical, semantic, settings.budget_tokens, chars_per_token=settings.chars_per_token)
    return RetrievalOutcome(chunks, lexical, semantic, warnings, degraded)
