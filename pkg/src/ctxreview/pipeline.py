"""End-to-end review run: fetch, index, retrieve, review, blend, summarize, post."""

from __future__ import annotations

import enum
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterator, Optional, Union

from ctxreview.agents import NoAgentResultsError, run_all_agents
from ctxreview.blending import BlendingDimension, blend, default_dimensions
from ctxreview.chunker import CloneError, InMemoryChunkStore, clone_ephemeral, semantic_chunk, store_chunks
from ctxreview.chunker.store import ChunkStore, StoreError
from ctxreview.config import EngineConfig
from ctxreview.context import build_optimized_context
from ctxreview.features import CHAT_SYSTEM, SUMMARY_SYSTEM, ChatCommand, answer_chat, summarize_pr
from ctxreview.integrations import (
    ConfluenceClient,
    InMemoryTracker,
    InMemoryWiki,
    JiraClient,
    LocalGitClient,
    OversizedDiffError,
    VcsError,
    fetch_diff,
    post_notice,
    post_review,
    resolve_knowledge_docs,
)
from ctxreview.integrations.clients import TrackerClient, VcsClient, WikiClient, run_git
from ctxreview.integrations.diff import UnifiedDiff
from ctxreview.llm import AnthropicProvider, Gateway, LlmError, ModelRequest, OpenAIProvider, ScriptedMockProvider
from ctxreview.models import CodeChunk, EventKind, ProviderId, PullRequestEvent, ReviewReport
from ctxreview.retrieval import (
    Embedder,
    HashingEmbedder,
    HttpEmbedder,
    RetrievalSettings,
    build_query,
    retrieve_relevant,
)

logger = logging.getLogger(__name__)

EMPTY_REVIEW = "<review>\n  <comments>\n  </comments>\n</review>"
STAGES = ("fetch", "docs", "chunk", "retrieve", "context", "agents", "blend", "summary", "post")


class RunOutcome(str, enum.Enum):
    POSTED = "posted"
    DEGRADED = "degraded"
    SKIPPED_OVERSIZE = "skipped-oversize"
    NOTHING_TO_REVIEW = "nothing-to-review"
    FAILED = "failed"


@dataclass
class RunReport:
    pr_ref: tuple[str, int]
    timings: dict[str, float] = field(default_factory=dict)
    ledger: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    outcome: RunOutcome = RunOutcome.POSTED
    cause: Optional[str] = None
    report: Optional[ReviewReport] = None
    retrieved: list[str] = field(default_factory=list)
    failed_agents: list[str] = field(default_factory=list)
    posted: Optional[dict] = None

    def to_dict(self, *, include_timings: bool = True) -> dict:
        d = {
            "pr_ref": {"repo_id": self.pr_ref[0], "pr_number": self.pr_ref[1]},
            "outcome": self.outcome.value,
            "cause": self.cause,
            "warnings": list(self.warnings),
            "failed_agents": list(self.failed_agents),
            "retrieved_context": list(self.retrieved),
            "ledger": list(self.ledger),
            "review": self.report.to_dict() if self.report else None,
        }
        if include_timings:
            d["timings"] = dict(self.timings)
            d["posted"] = self.posted
        return d


@dataclass
class Services:
    """Shared, concurrency-safe collaborators; one set per process."""

    gateway: Gateway
    store: ChunkStore = field(default_factory=InMemoryChunkStore)
    embedder: Optional[Embedder] = None
    tracker: TrackerClient = field(default_factory=InMemoryTracker)
    wiki: WikiClient = field(default_factory=InMemoryWiki)
    tmp_dir: Optional[str] = None


def offline_answer(req: ModelRequest) -> str:
    """Canned replies for the unscripted mock: no findings, a placeholder summary."""
    if req.system_prompt.startswith("You are an experienced code reviewer"):
        return "No findings." if not req.structured_mode else EMPTY_REVIEW
    if req.system_prompt == SUMMARY_SYSTEM:
        return "Offline mock provider: no model summary. Configure a provider for real summaries."
    if req.system_prompt == CHAT_SYSTEM:
        return "Offline mock provider: chat answers need a configured model provider."
    return ""


def make_gateway(cfg: EngineConfig) -> Gateway:
    g = cfg.gateway
    kw = {} if g.context_limit is None else {"context_limit": g.context_limit}
    if g.provider == "mock":
        if g.mock_script:
            provider = ScriptedMockProvider.from_file(g.mock_script, **kw)
        else:
            provider = ScriptedMockProvider({}, fallback=offline_answer, **kw)
    elif g.provider == "openai":
        provider = OpenAIProvider(g.api_key or "", **({"base_url": g.base_url} if g.base_url else {}), **kw)
    else:
        provider = AnthropicProvider(g.api_key or "", **({"base_url": g.base_url} if g.base_url else {}), **kw)
    return Gateway(
        provider,
        model_id=g.model_id,
        max_concurrency=g.max_concurrency,
        attempts=g.attempts,
        backoff=g.backoff_seconds,
        max_output_tokens=g.max_output_tokens,
        temperature=g.temperature,
        chars_per_token=cfg.retrieval.chars_per_token,
    )


def make_embedder(cfg: EngineConfig) -> Optional[Embedder]:
    r = cfg.retrieval
    if r.embedder == "none":
        return None
    if r.embedder == "http":
        return HttpEmbedder(r.embedder_url or "", r.embedder_model, cfg.gateway.api_key or "", r.embedder_dim)
    return HashingEmbedder(r.embedder_dim)


def make_services(cfg: EngineConfig, *, store: Optional[ChunkStore] = None) -> Services:
    v = cfg.vcs
    tracker: TrackerClient = JiraClient(v.jira_url, v.jira_token or "") if v.jira_url else InMemoryTracker()
    wiki: WikiClient = (
        ConfluenceClient(v.confluence_url, v.confluence_token or "") if v.confluence_url else InMemoryWiki()
    )
    return Services(
        gateway=make_gateway(cfg),
        store=store or InMemoryChunkStore(),
        embedder=make_embedder(cfg),
        tracker=tracker,
        wiki=wiki,
    )


def dimensions_for(cfg: EngineConfig, gateway: Optional[Gateway]) -> list[BlendingDimension]:
    order = {name: (i + 1) * 10 for i, name in enumerate(cfg.blending.order)}
    return default_dimensions(
        cfg.thresholds,
        gateway if cfg.blending.summarize_with_model else None,
        default_threshold=cfg.agents.default_threshold,
        confidence_order=order["confidence-filter"],
        overlap_order=order["overlap-summarize"],
    )


class _Timer:
    def __init__(self, run: RunReport) -> None:
        self.run = run

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.run.timings[name] = max(0.0, time.perf_counter() - start)


def _cause_chain(exc: BaseException) -> str:
    parts = []
    seen = set()
    cur: Optional[BaseException] = exc
    while cur is not None and id(cur) not in seen:
        seen.add(id(cur))
        parts.append(f"{cur.__class__.__name__}: {cur}")
        cur = cur.__cause__ or cur.__context__
    return " <- ".join(parts)


def _index_repository(
    event: PullRequestEvent,
    cfg: EngineConfig,
    services: Services,
    chunk_source: Optional[tuple[str, str]],
    warnings: list[str],
    *,
    reuse: bool = False,
) -> tuple[str, bool]:
    """Clone, chunk and store the revision; returns (namespace, success).

    Each indexed revision gets its own namespace so concurrent PRs of one
    repository never see each other's chunks.  With ``reuse`` a namespace
    that still has live chunks is not re-indexed.
    """
    url, ref = chunk_source or (event.repo_url, event.source_branch)
    namespace = f"{event.repo_id}@{ref}"
    try:
        if reuse and services.store.scan(namespace):
            return namespace, True
        with clone_ephemeral(url, ref, tmp_dir=services.tmp_dir) as ws:
            chunks = semantic_chunk(
                ws,
                cfg.chunker.languages,
                repo_id=namespace,
                max_chunk_lines=cfg.chunker.max_chunk_lines,
                workers=cfg.chunker.workers,
            )
        warnings.extend(chunks.warnings)
        store_chunks(chunks, timedelta(minutes=cfg.chunker.ttl_minutes), services.store)
    except (CloneError, StoreError) as exc:
        warnings.append(f"repository indexing failed, reviewing without code context: {exc}")
        return namespace, False
    return namespace, True


def _retrieve(
    diff: UnifiedDiff, namespace: str, indexed: bool, cfg: EngineConfig, services: Services, warnings: list[str]
) -> tuple[list[CodeChunk], bool]:
    """Relevant chunks for the diff and whether retrieval ran degraded."""
    if not indexed:
        return [], False
    settings = RetrievalSettings(
        cfg.retrieval.top_k, cfg.retrieval.min_similarity, cfg.retrieval.budget_tokens, cfg.retrieval.chars_per_token
    )
    try:
        outcome = retrieve_relevant(build_query(diff), services.store, services.embedder, settings, repo_id=namespace)
    except StoreError as exc:
        warnings.append(f"retrieval failed, reviewing without code context: {exc}")
        return [], True
    warnings.extend(outcome.warnings)
    return outcome.chunks, outcome.degraded


def review_pull_request(
    event: PullRequestEvent,
    cfg: EngineConfig,
    services: Services,
    vcs: VcsClient,
    *,
    chunk_source: Optional[tuple[str, str]] = None,
) -> RunReport:
    """Run every stage in order and report what happened.

    ``chunk_source`` overrides the (url, ref) that is cloned for indexing;
    by default the PR's source branch is cloned from ``event.repo_url``.
    """
    run = RunReport(event.pr_ref)
    timer = _Timer(run)
    gateway = services.gateway.fork()
    degraded = False
    try:
        with timer.stage("fetch"):
            try:
                diff = fetch_diff(event, vcs, cfg.vcs.max_loc)
            except OversizedDiffError as exc:
                run.outcome = RunOutcome.SKIPPED_OVERSIZE
                run.warnings.append(str(exc))
                post_notice(
                    event,
                    f"This pull request changes {exc.changed_loc} lines, above the automated review "
                    f"limit of {exc.limit}; it was not reviewed automatically.",
                    vcs,
                )
                return run
        if diff.is_empty:
            run.outcome = RunOutcome.NOTHING_TO_REVIEW
            return run

        with timer.stage("docs"):
            docs = resolve_knowledge_docs(event.description, services.tracker, services.wiki)
            run.warnings.extend(docs.warnings)

        with timer.stage("chunk"):
            namespace, indexed = _index_repository(event, cfg, services, chunk_source, run.warnings)
            degraded = degraded or not indexed

        with timer.stage("retrieve"):
            relevant, retrieval_degraded = _retrieve(diff, namespace, indexed, cfg, services, run.warnings)
            degraded = degraded or retrieval_degraded
            run.retrieved = [f"{c.file_path}:{c.start_line}-{c.end_line} {c.qualified_name}" for c in relevant]

        with timer.stage("context"):
            ctx = build_optimized_context(event, diff, docs, relevant)

        with timer.stage("agents"):
            results = run_all_agents(
                ctx,
                cfg.enabled_agents,
                gateway,
                token_budget=cfg.agents.token_budget,
                max_workers=len(cfg.enabled_agents),
            )
            for r in results:
                run.warnings.extend(r.warnings)
                if r.failed:
                    degraded = True
                    run.failed_agents.append(r.agent.value)
                    run.warnings.append(f"{r.agent.value}: agent failed: {r.error}")
                elif r.parse_failed:
                    degraded = True

        with timer.stage("blend"):
            report = blend(results, dimensions_for(cfg, gateway), pr_ref=event.pr_ref)
            run.warnings.extend(report.warnings)
            run.report = report

        with timer.stage("summary"):
            if cfg.features.summary:
                report.summary = summarize_pr(ctx, gateway, review_minutes=cfg.review_minutes)
                degraded = degraded or report.summary.degraded

        with timer.stage("post"):
            receipt = post_review(event, report, vcs, backoff=cfg.gateway.backoff_seconds)
            run.posted = receipt.to_dict()
            if receipt.partial_failure:
                degraded = True
                run.warnings.extend(f"posting failed: {f}" for f in receipt.failures)
            run.warnings.extend(f"posted as file-level comment: {p.file_path}:{p.line_number}" for p in receipt.fallbacks)

        run.outcome = RunOutcome.DEGRADED if degraded else RunOutcome.POSTED
    except (NoAgentResultsError, LlmError, VcsError, OSError, ValueError) as exc:
        logger.exception("review of %s#%d failed", *event.pr_ref)
        run.outcome = RunOutcome.FAILED
        run.cause = _cause_chain(exc)
    finally:
        run.ledger = [row.to_dict() for row in gateway.ledger.rows()]
    return run


# --- chat -----------------------------------------------------------------------


@dataclass
class ChatOutcome:
    reply: str
    reply_id: Optional[str]
    warnings: list[str] = field(default_factory=list)


def answer_chat_command(
    event: PullRequestEvent,
    cmd: ChatCommand,
    cfg: EngineConfig,
    services: Services,
    vcs: VcsClient,
    *,
    chunk_source: Optional[tuple[str, str]] = None,
) -> ChatOutcome:
    """Answer one ``#dd`` comment with a single model call and post the reply.

    Reuses the PR's indexed chunks while they are still live in the store.
    """
    warnings: list[str] = []
    diff = fetch_diff(event, vcs, None)
    docs = resolve_knowledge_docs(event.description, services.tracker, services.wiki)
    warnings.extend(docs.warnings)
    namespace, indexed = _index_repository(event, cfg, services, chunk_source, warnings, reuse=True)
    relevant, _ = _retrieve(diff, namespace, indexed, cfg, services, warnings)
    repo_chunks = [e.chunk for e in services.store.scan(namespace)] if indexed and cmd.anchor else []
    ctx = build_optimized_context(event, diff, docs, relevant)
    reply = answer_chat(cmd, ctx, services.gateway, repo_chunks=repo_chunks)
    parent = event.comment.comment_id if event.comment else None
    reply_id = vcs.reply_to_comment(event, parent, reply) if parent else vcs.post_pr_comment(event, reply)
    return ChatOutcome(reply, reply_id, warnings)


# --- offline mode ---------------------------------------------------------------


def local_event(repo: LocalGitClient, base: str, head: str) -> PullRequestEvent:
    """A synthetic PR event for reviewing ``base...head`` of a local repository."""
    subject = ""
    body = ""
    try:
        message = run_git(repo.repo_path, "log", "-1", "--format=%B", head).strip()
        subject, _, body = message.partition("\n")
    except VcsError:
        pass
    return PullRequestEvent(
        provider_id=ProviderId.GITHUB,
        repo_url=str(repo.repo_path.resolve()),
        repo_id=repo.repo_path.resolve().name,
        pr_number=1,
        source_branch=head,
        target_branch=base,
        title=subject.strip() or f"{head} into {base}",
        description=body.strip(),
        author="local",
        event_kind=EventKind.OPENED,
        received_at=datetime(1970, 1, 1, tzinfo=timezone.utc),
    )


def review_local(
    repo_path: Union[str, Path],
    base: str,
    head: str,
    cfg: EngineConfig,
    *,
    services: Optional[Services] = None,
) -> RunReport:
    """Review ``base...head`` of a local working tree; nothing leaves the process.

    Raises VcsError for a path that is not a working tree and
    BranchNotFoundError for unknown refs.
    """
    repo = LocalGitClient(repo_path)
    head_sha = repo.resolve(head)
    repo.resolve(base)
    services = services or make_services(cfg)
    event = local_event(repo, base, head)
    return review_pull_request(event, cfg, services, repo, chunk_source=(event.repo_url, head_sha))


def render_run_text(run: RunReport) -> str:
    """Human-readable report; contains no timings so it is stable across runs."""
    lines = [f"Review of {run.pr_ref[0]} ({run.outcome.value})"]
    if run.outcome is RunOutcome.NOTHING_TO_REVIEW:
        lines.append("Nothing to review: the two refs have no differences.")
    if run.cause:
        lines.append(f"Cause: {run.cause}")
    if run.retrieved:
        lines += ["", "Retrieved context:"] + [f"  {r}" for r in run.retrieved]
    report = run.report
    if report is not None:
        lines += ["", f"Comments ({len(report.comments)}):"]
        for c in report.comments:
            where = f"{c.file_path}" if c.file_level else f"{c.file_path}:{c.line_number}"
            agents = ", ".join(a.value for a in (c.contributors or (c.agent,)))
            lines.append(f"- {where} [{c.bucket}] confidence {c.confidence_score:.2f} ({agents})")
            lines += [f"    {t}" for t in c.description.splitlines()]
            if c.corrective_code:
                lines += ["    suggested code:"] + [f"      {t}" for t in c.corrective_code.splitlines()]
        if report.dropped_count_by_dimension:
            lines.append(
                "Dropped: " + ", ".join(f"{k} {v}" for k, v in report.dropped_count_by_dimension.items())
            )
        if report.summary is not None:
            s = report.summary
            lines += [
                "",
                f"Summary ({s.size_class.value}, {s.changed_loc} LOC, ~{s.estimated_review_minutes} min review):",
            ] + [f"  {t}" for t in s.summary_text.splitlines()]
    if run.warnings:
        lines += ["", "Warnings:"] + [f"  {w}" for w in run.warnings]
    return "\n".join(lines) + "\n"


def render_run_json(run: RunReport) -> str:
    return json.dumps(run.to_dict(include_timings=False), indent=2, sort_keys=True) + "\n"
