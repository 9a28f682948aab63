"""Blending engine: consolidates every agent's comments into the final set.

A dimension is a rule applied to the whole comment list.  The defaults are
a per-agent confidence filter (order 10) and same-line overlap
summarization (order 20).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence

from ctxreview.agents import DEFAULT_THRESHOLDS, AgentResult
from ctxreview.llm import Gateway, LlmError
from ctxreview.models import AgentKind, ReviewComment, ReviewReport

logger = logging.getLogger(__name__)

DEFAULT_GLOBAL_THRESHOLD = 0.6

Comments = list[ReviewComment]


@dataclass(frozen=True)
class BlendingDimension:
    name: str
    kind: str  # "filter" or "transform"
    order: int
    apply: Callable[[Comments, list[str]], Comments]


def confidence_filter(
    comments: Sequence[ReviewComment],
    thresholds: Mapping[AgentKind, float],
    *,
    default_threshold: float = DEFAULT_GLOBAL_THRESHOLD,
    warnings: Optional[list[str]] = None,
) -> Comments:
    """Keep a comment iff its confidence reaches its agent's threshold."""
    kept = []
    warned = set()
    for c in comments:
        threshold = thresholds.get(c.agent)
        if threshold is None:
            threshold = default_threshold
            if c.agent not in warned:
                warned.add(c.agent)
                msg = f"no confidence threshold for {c.agent.value}; using default {default_threshold}"
                logger.warning(msg)
                if warnings is not None:
                    warnings.append(msg)
        if c.confidence_score >= threshold:
            kept.append(c)
    return kept


def fallback_summary(members: Sequence[ReviewComment]) -> str:
    lines = [f"{len(members)} reviewers flagged this line:"]
    lines += [f"- [{m.agent.value}] {m.description}" for m in members]
    return "\n".join(lines)


def _summary_prompt(members: Sequence[ReviewComment]) -> tuple[str, str]:
    system = (
        "You merge code review comments that target the same line into one concise comment. "
        "Keep every distinct concern, drop repetition, and do not add new claims."
    )
    user = "Comments on the same line:\n\n" + "\n\n".join(
        f"[{m.agent.value}, {m.bucket}] {m.description}" for m in members
    )
    return system, user


def overlap_summarize(
    comments: Sequence[ReviewComment],
    gateway: Optional[Gateway] = None,
    *,
    warnings: Optional[list[str]] = None,
) -> Comments:
    """Collapse comments sharing (file, line) into one.

    The merged comment takes confidence, bucket, corrective code and agent from
    its highest-confidence member (ties: earliest agent in canonical order).
    Groups are emitted in order of their first member.
    """
    groups: dict[tuple[str, int], list[ReviewComment]] = {}
    for c in comments:
        groups.setdefault(c.location, []).append(c)
    out = []
    for members in groups.values():
        if len(members) == 1:
            out.append(members[0])
            continue
        lead = min(members, key=lambda m: (-m.confidence_score, m.agent.rank))
        description = None
        if gateway is not None:
            try:
                system, user = _summary_prompt(members)
                description = gateway.complete(gateway.request(system, user), agent="blending").text.strip() or None
            except LlmError as exc:
                msg = f"overlap summarization at {lead.file_path}:{lead.line_number} fell back: {exc}"
                logger.warning(msg)
                if warnings is not None:
                    warnings.append(msg)
        contributors = []
        for m in members:
            for a in m.contributors or (m.agent,):
                if a not in contributors:
                    contributors.append(a)
        out.append(
            replace(
                lead,
                description=description or fallback_summary(members),
                file_level=all(m.file_level for m in members),
                contributors=tuple(sorted(contributors, key=lambda a: a.rank)),
            )
        )
    return out


def default_dimensions(
    thresholds: Optional[Mapping[AgentKind, float]] = None,
    gateway: Optional[Gateway] = None,
    *,
    default_threshold: float = DEFAULT_GLOBAL_THRESHOLD,
    confidence_order: int = 10,
    overlap_order: int = 20,
) -> list[BlendingDimension]:
    thresholds = dict(DEFAULT_THRESHOLDS if thresholds is None else thresholds)
    return [
        BlendingDimension(
            "confidence-filter",
            "filter",
            confidence_order,
            lambda cs, w: confidence_filter(cs, thresholds, default_threshold=default_threshold, warnings=w),
        ),
        BlendingDimension(
            "overlap-summarize",
            "transform",
            overlap_order,
            lambda cs, w: overlap_summarize(cs, gateway, warnings=w),
        ),
    ]


def blend_comments(
    comments: Sequence[ReviewComment],
    dims: Sequence[BlendingDimension],
    *,
    pr_ref: tuple[str, int] = ("", 0),
) -> ReviewReport:
    current = list(comments)
    dropped: dict[str, int] = {}
    warnings: list[str] = []
    for dim in sorted(dims, key=lambda d: d.order):
        before = len(current)
        current = dim.apply(current, warnings)
        if len(current) > before:
            raise ValueError(f"blending dimension {dim.name} expanded the comment list")
        dropped[dim.name] = before - len(current)
    return ReviewReport(pr_ref=pr_ref, comments=current, dropped_count_by_dimension=dropped, warnings=warnings)


def blend(
    results: Sequence[AgentResult],
    dims: Optional[Sequence[BlendingDimension]] = None,
    thresholds: Optional[Mapping[AgentKind, float]] = None,
    *,
    pr_ref: tuple[str, int] = ("", 0),
    gateway: Optional[Gateway] = None,
) -> ReviewReport:
    """Union all agents' comments (canonical agent order) and apply the dimensions."""
    if dims is None:
        dims = default_dimensions(thresholds, gateway)
    union = [c for r in sorted(results, key=lambda r: r.agent.rank) for c in r.comments]
    return blend_comments(union, dims, pr_ref=pr_ref)
