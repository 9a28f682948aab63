"""Optimized-context assembly and per-agent context bundles."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ctxreview.chunker.chunking import language_of
from ctxreview.integrations.diff import UnifiedDiff
from ctxreview.models import AgentKind, CodeChunk, KnowledgeDoc, PullRequestEvent, ReviewPass
from ctxreview.retrieval import CHARS_PER_TOKEN, estimate_tokens


class ContextPart(str, enum.Enum):
    DIFF = "diff"
    TITLE = "title"
    DESCRIPTION = "description"
    CONTEXT_CODE = "context-code"
    USER_STORY = "user-story"
    CONFLUENCE_PAGES = "confluence-pages"
    INITIAL_LLM_REVIEW = "initial-llm-review"


_BASE = frozenset({ContextPart.DIFF, ContextPart.TITLE, ContextPart.DESCRIPTION})
_WITH_CODE = _BASE | {ContextPart.CONTEXT_CODE}

# which parts each agent sees in its single pass
AGENT_PARTS: dict[AgentKind, frozenset[ContextPart]] = {
    AgentKind.SECURITY: _BASE,
    AgentKind.CODE_COMMUNICATION: _BASE,
    AgentKind.PERFORMANCE_OPTIMIZATION: _WITH_CODE,
    AgentKind.CODE_MAINTAINABILITY: _WITH_CODE,
    AgentKind.ERROR: _WITH_CODE,
    AgentKind.BUSINESS_LOGIC_VALIDATION: _WITH_CODE | {ContextPart.USER_STORY, ContextPart.CONFLUENCE_PAGES},
}

SUMMARY_PARTS = _BASE


class ReflectionWithoutReviewError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizedContext:
    pr_title: str
    pr_description: str
    pr_diff: UnifiedDiff
    story: Optional[KnowledgeDoc] = None
    approach: Optional[KnowledgeDoc] = None
    relevant_chunks: tuple[CodeChunk, ...] = ()


def build_optimized_context(
    event: PullRequestEvent,
    diff: UnifiedDiff,
    docs: Sequence[KnowledgeDoc],
    chunks: Sequence[CodeChunk],
) -> OptimizedContext:
    story = next((d for d in docs if d.source == "story"), None)
    approach = next((d for d in docs if d.source == "approach"), None)
    unique = {}
    for c in chunks:
        unique.setdefault(c.chunk_id, c)
    return OptimizedContext(
        pr_title=event.title,
        pr_description=event.description or "",
        pr_diff=diff,
        story=story,
        approach=approach,
        relevant_chunks=tuple(unique.values()),
    )


def render_chunk(chunk: CodeChunk) -> str:
    lang = language_of(chunk.file_path)
    fence = "" if lang == "text" else lang
    body = chunk.content if chunk.content.endswith("\n") else chunk.content + "\n"
    return (
        f"### {chunk.file_path}:{chunk.start_line}-{chunk.end_line} ({chunk.qualified_name})\n"
        f"```{fence}\n{body}```"
    )


def _doc_section(heading: str, doc: KnowledgeDoc) -> str:
    return f"## {heading}: {doc.external_key} {doc.title}".rstrip() + f"\n{doc.body}".rstrip()


def render_parts(
    ctx: OptimizedContext,
    parts: frozenset[ContextPart],
    *,
    chunks: Optional[Sequence[CodeChunk]] = None,
    initial_review: Optional[str] = None,
) -> str:
    """Serialize the selected parts; the diff goes last, just before any initial review."""
    sections = []
    if ContextPart.TITLE in parts and ctx.pr_title.strip():
        sections.append(f"## Pull request title\n{ctx.pr_title.strip()}")
    if ContextPart.DESCRIPTION in parts and ctx.pr_description.strip():
        sections.append(f"## Pull request description\n{ctx.pr_description.strip()}")
    if ContextPart.USER_STORY in parts and ctx.story is not None:
        sections.append(_doc_section("User story", ctx.story))
    if ContextPart.CONFLUENCE_PAGES in parts and ctx.approach is not None:
        sections.append(_doc_section("Approach document", ctx.approach))
    if ContextPart.CONTEXT_CODE in parts:
        selected = ctx.relevant_chunks if chunks is None else chunks
        if selected:
            sections.append("## Related code from the repository\n" + "\n\n".join(render_chunk(c) for c in selected))
    if ContextPart.DIFF in parts and not ctx.pr_diff.is_empty:
        sections.append(f"## Pull request diff\n```diff\n{ctx.pr_diff}```")
    if ContextPart.INITIAL_LLM_REVIEW in parts and initial_review:
        sections.append(f"## Your initial review\n{initial_review.strip()}")
    return "\n\n".join(sections)


@dataclass(frozen=True)
class AgentContextBundle:
    agent: AgentKind
    review_pass: ReviewPass
    parts: frozenset[ContextPart]
    text: str
    chunks: tuple[CodeChunk, ...] = ()
    warnings: tuple[str, ...] = field(default=())


def parts_for(agent: AgentKind, review_pass: ReviewPass) -> frozenset[ContextPart]:
    parts = AGENT_PARTS[agent]
    if review_pass is ReviewPass.REFLECTION:
        parts = parts | {ContextPart.INITIAL_LLM_REVIEW}
    return parts


def bundle_for_agent(
    ctx: OptimizedContext,
    agent: AgentKind,
    review_pass: ReviewPass = ReviewPass.SINGLE_PASS,
    initial_review: Optional[str] = None,
    *,
    token_budget: Optional[int] = None,
    chars_per_token: float = CHARS_PER_TOKEN,
) -> AgentContextBundle:
    """Select the agent's parts and render them, dropping the lowest-ranked
    context chunks until the text fits ``token_budget``."""
    if review_pass is ReviewPass.REFLECTION and not initial_review:
        raise ReflectionWithoutReviewError(f"reflection for {agent.value} requested without an initial review")
    parts = parts_for(agent, review_pass)
    chunks = list(ctx.relevant_chunks) if ContextPart.CONTEXT_CODE in parts else []
    review = initial_review if review_pass is ReviewPass.REFLECTION else None
    warnings = []
    text = render_parts(ctx, parts, chunks=chunks, initial_review=review)
    if token_budget is not None:
        while chunks and estimate_tokens(text, chars_per_token) > token_budget:
            dropped = chunks.pop()
            warnings.append(
                f"{agent.value}: dropped context chunk {dropped.file_path}:{dropped.start_line} "
                f"({dropped.qualified_name}) to fit the token budget"
            )
            text = render_parts(ctx, parts, chunks=chunks, initial_review=review)
    return AgentContextBundle(agent, review_pass, parts, text, tuple(chunks), tuple(warnings))
