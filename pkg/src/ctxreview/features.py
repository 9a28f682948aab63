"""PR summaries and ``#dd`` chat commands."""

from __future__ import annotations

import logging
import re
import uuid
from dataclasses import dataclass
from typing import Mapping, Optional

from ctxreview.context import SUMMARY_PARTS, ContextPart, OptimizedContext, render_chunk, render_parts
from ctxreview.integrations.diff import UnifiedDiff
from ctxreview.llm import Gateway, LlmError
from ctxreview.models import CodeChunk, PrSummary, SizeClass

logger = logging.getLogger(__name__)

# inclusive upper LOC bound per class; XXL is everything above 500
SIZE_BOUNDS = ((SizeClass.S, 50), (SizeClass.M, 100), (SizeClass.L, 200), (SizeClass.XL, 500))
DEFAULT_REVIEW_MINUTES = {
    SizeClass.S: 10,
    SizeClass.M: 20,
    SizeClass.L: 40,
    SizeClass.XL: 90,
    SizeClass.XXL: 180,
}
CHAT_TOP_CHUNKS = 5


def size_class(changed_loc: int) -> SizeClass:
    if changed_loc < 0:
        raise ValueError("changed LOC cannot be negative")
    for cls, upper in SIZE_BOUNDS:
        if changed_loc <= upper:
            return cls
    return SizeClass.XXL


def diff_statistics(diff: UnifiedDiff) -> str:
    lines = [f"{len(diff.files)} file(s) changed, +{sum(f.added for f in diff.files)} "
             f"-{sum(f.removed for f in diff.files)}"]
    lines += [f"- {f.path}: +{f.added} -{f.removed}" for f in diff.files]
    return "\n".join(lines)


SUMMARY_SYSTEM = (
    "You write pull request summaries for reviewers. In a few short paragraphs or bullets, "
    "say what the change does, why, and which areas a reviewer should look at first."
)


def summarize_pr(
    ctx: OptimizedContext,
    gateway: Optional[Gateway],
    *,
    review_minutes: Optional[Mapping[SizeClass, int]] = None,
) -> PrSummary:
    loc = ctx.pr_diff.changed_loc
    cls = size_class(loc)
    minutes = dict(DEFAULT_REVIEW_MINUTES, **(review_minutes or {}))[cls]
    text, degraded = None, False
    if gateway is not None:
        try:
            user = render_parts(ctx, SUMMARY_PARTS) + "\n\nSummarize this pull request."
            text = gateway.complete(gateway.request(SUMMARY_SYSTEM, user), agent="summary").text.strip()
        except LlmError as exc:
            logger.warning("summary generation failed, using diff statistics: %s", exc)
    if not text:
        text, degraded = diff_statistics(ctx.pr_diff), True
    return PrSummary(text, loc, cls, minutes, degraded)


def render_summary_comment(summary: PrSummary) -> str:
    return (
        "## PR Summary\n"
        f"**Size:** {summary.size_class.value} ({summary.changed_loc} LOC changed)\n"
        f"**Estimated review time:** {summary.estimated_review_minutes} min\n\n"
        f"{summary.summary_text}"
    )


# --- chat -----------------------------------------------------------------------


class EmptyChatPromptError(ValueError):
    pass


@dataclass(frozen=True)
class ChatCommand:
    trigger: str  # "dd" or "deputydev"
    prompt: str
    author: str = ""
    anchor: Optional[tuple[str, int]] = None


_TRIGGER_RE = re.compile(r"^#(deputydev|dd)(?=$|[\s-])", re.I)


def parse_chat_command(
    comment_text: str, *, author: str = "", anchor: Optional[tuple[str, int]] = None
) -> Optional[ChatCommand]:
    """Return a command iff the trimmed text starts with ``#dd`` / ``#deputydev``.

    Raises EmptyChatPromptError for a bare trigger.
    """
    text = (comment_text or "").strip()
    m = _TRIGGER_RE.match(text)
    if not m:
        return None
    prompt = text[m.end():].lstrip()
    if prompt.startswith("-"):
        prompt = prompt[1:]
    prompt = prompt.strip()
    if not prompt:
        raise EmptyChatPromptError("empty chat prompt")
    return ChatCommand(m.group(1).lower(), prompt, author, anchor)


CHAT_SYSTEM = (
    "You are a code review assistant answering questions on a pull request. Use the pull "
    "request context provided. You may explain, write code, tests or documentation. "
    "Be direct and concise."
)
CHAT_FAILURE_REPLY = "Sorry, I could not answer this right now (error id {error_id}). Please try again later."


def anchor_chunk(ctx: OptimizedContext, chunks: list[CodeChunk], anchor: tuple[str, int]) -> Optional[CodeChunk]:
    path, line = anchor
    for c in chunks:
        if c.file_path == path and c.contains_line(line):
            return c
    return None


def chat_prompt(
    cmd: ChatCommand, ctx: OptimizedContext, repo_chunks: Optional[list[CodeChunk]] = None
) -> str:
    """Title, description and diff, then top relevant chunks (or the anchored chunk)."""
    sections = [render_parts(ctx, frozenset({ContextPart.TITLE, ContextPart.DESCRIPTION}))]
    top = list(ctx.relevant_chunks[:CHAT_TOP_CHUNKS])
    if cmd.anchor is not None:
        anchored = anchor_chunk(ctx, list(repo_chunks or []) + list(ctx.relevant_chunks), cmd.anchor)
        if anchored is not None:
            sections.append(f"## Code the question refers to ({cmd.anchor[0]}:{cmd.anchor[1]})\n" + render_chunk(anchored))
            top = [c for c in top if c.chunk_id != anchored.chunk_id]
    if top:
        sections.append("## Related code from the repository\n" + "\n\n".join(render_chunk(c) for c in top))
    sections.append(render_parts(ctx, frozenset({ContextPart.DIFF})))
    sections.append(f"## Question\n{cmd.prompt}")
    return "\n\n".join(s for s in sections if s)


def answer_chat(
    cmd: ChatCommand,
    ctx: OptimizedContext,
    gateway: Gateway,
    *,
    repo_chunks: Optional[list[CodeChunk]] = None,
) -> str:
    try:
        req = gateway.request(CHAT_SYSTEM, chat_prompt(cmd, ctx, repo_chunks))
        return gateway.complete(req, agent="chat").text
    except LlmError as exc:
        error_id = uuid.uuid4().hex[:8]
        logger.warning("chat answer failed [%s]: %s", error_id, exc)
        return CHAT_FAILURE_REPLY.format(error_id=error_id)
