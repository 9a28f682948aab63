"""Diff retrieval and delivery of review results to the VCS."""

from __future__ import annotations

import hashlib
import logging
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from ctxreview.integrations.clients import (
    LineNotInDiffError,
    OversizedDiffError,
    ProviderRejection,
    VcsClient,
)
from ctxreview.integrations.diff import UnifiedDiff, parse_unified_diff
from ctxreview.models import PullRequestEvent, ReviewComment, ReviewReport

logger = logging.getLogger(__name__)

DEFAULT_MAX_LOC = 5000
MARKER_RE = re.compile(r"<!-- ctxreview:([0-9a-f]{16}) -->")


def fetch_diff(
    event: PullRequestEvent, client: VcsClient, max_loc: Optional[int] = DEFAULT_MAX_LOC
) -> UnifiedDiff:
    diff = parse_unified_diff(client.fetch_diff_text(event))
    if max_loc is not None and diff.changed_loc > max_loc:
        raise OversizedDiffError(diff.changed_loc, max_loc)
    return diff


@dataclass(frozen=True)
class PostedItem:
    kind: str  # inline, file, summary, notice
    provider_id: str
    file_path: Optional[str] = None
    line_number: Optional[int] = None
    fallback: bool = False


@dataclass
class PostReceipt:
    posted: list[PostedItem] = field(default_factory=list)
    skipped_duplicates: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def provider_ids(self) -> list[str]:
        return [p.provider_id for p in self.posted]

    @property
    def fallbacks(self) -> list[PostedItem]:
        return [p for p in self.posted if p.fallback]

    @property
    def partial_failure(self) -> bool:
        return bool(self.failures)

    def to_dict(self) -> dict:
        return {
            "posted": [p.__dict__ for p in self.posted],
            "skipped_duplicates": self.skipped_duplicates,
            "failures": list(self.failures),
        }


def content_hash(event: PullRequestEvent, *parts: object) -> str:
    h = hashlib.sha256()
    for part in (event.repo_id, event.pr_number, *parts):
        h.update(repr(part).encode())
        h.update(b"\x00")
    return h.hexdigest()[:16]


def with_marker(body: str, digest: str) -> str:
    return f"{body}\n\n<!-- ctxreview:{digest} -->"


def render_comment(comment: ReviewComment, *, file_level: bool = False) -> str:
    lines = []
    if file_level:
        lines.append(f"_Line {comment.line_number} (not visible in the current diff)_")
        lines.append("")
    lines.append(f"**{comment.bucket}**: {comment.description}")
    if comment.corrective_code:
        lines += ["", "```", comment.corrective_code.rstrip("\n"), "```"]
    agents = comment.contributors or (comment.agent,)
    lines += ["", f"confidence {comment.confidence_score:.2f} | {', '.join(a.value for a in agents)}"]
    return "\n".join(lines)


def _with_retry(fn: Callable[[], str], attempts: int, backoff: float, sleep: Callable[[float], None]) -> str:
    for attempt in range(attempts):
        try:
            return fn()
        except ProviderRejection:
            if attempt == attempts - 1:
                raise
            sleep(backoff * 2**attempt)
    raise AssertionError("unreachable")


def post_review(
    event: PullRequestEvent,
    report: ReviewReport,
    client: VcsClient,
    *,
    attempts: int = 3,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> PostReceipt:
    """Post inline comments and the summary, skipping anything already posted.

    Each body carries a hidden content-hash marker; the markers found among
    the PR's existing comments make reposting the same report a no-op.
    """
    from ctxreview.features import render_summary_comment

    receipt = PostReceipt()
    existing = set()
    for posted in client.list_comments(event):
        existing.update(MARKER_RE.findall(posted.body))

    def attempt(fn: Callable[[], str]) -> Optional[str]:
        try:
            return _with_retry(fn, attempts, backoff, sleep)
        except ProviderRejection as exc:
            receipt.failures.append(str(exc))
            return None

    for comment in report.comments:
        digest = content_hash(event, "comment", comment.file_path, comment.line_number, comment.description)
        if digest in existing:
            receipt.skipped_duplicates += 1
            continue
        body = with_marker(render_comment(comment), digest)
        fallback = comment.file_level
        pid = None
        if not fallback:
            try:
                pid = _with_retry(
                    lambda: client.post_inline_comment(event, comment.file_path, comment.line_number, body),
                    attempts,
                    backoff,
                    sleep,
                )
            except LineNotInDiffError:
                fallback = True
            except ProviderRejection as exc:
                receipt.failures.append(f"{comment.file_path}:{comment.line_number}: {exc}")
                continue
        if fallback:
            body = with_marker(render_comment(comment, file_level=True), digest)
            pid = attempt(lambda: client.post_file_comment(event, comment.file_path, body))
            if pid is None:
                continue
        receipt.posted.append(PostedItem("inline" if not fallback else "file", pid, comment.file_path, comment.line_number, fallback))
        existing.add(digest)

    if report.summary is not None:
        text = render_summary_comment(report.summary)
        digest = content_hash(event, "summary", text)
        if digest in existing:
            receipt.skipped_duplicates += 1
        else:
            pid = attempt(lambda: client.post_pr_comment(event, with_marker(text, digest)))
            if pid is not None:
                receipt.posted.append(PostedItem("summary", pid))
    return receipt


def post_notice(event: PullRequestEvent, text: str, client: VcsClient) -> Optional[str]:
    """Post a one-off top-level notice (e.g. oversized PR), once per content."""
    digest = content_hash(event, "notice", text)
    for posted in client.list_comments(event):
        if digest in MARKER_RE.findall(posted.body):
            return None
    return client.post_pr_comment(event, with_marker(text, digest))
