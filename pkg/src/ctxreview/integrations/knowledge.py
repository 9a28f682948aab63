"""Resolution of ticket keys and wiki links mentioned in a PR description."""

from __future__ import annotations

import html
import logging
import re
from html.parser import HTMLParser
from typing import Optional

from ctxreview.integrations.clients import FetchError, TrackerClient, WikiClient
from ctxreview.models import KnowledgeDoc, WarningList

logger = logging.getLogger(__name__)

TICKET_RE = re.compile(r"\b[A-Z][A-Z0-9]+-[1-9]\d*\b")
URL_RE = re.compile(r"https?://[^\s<>()\[\]\"']+")


class DocList(WarningList):
    """KnowledgeDocs in order of appearance, plus per-reference fetch warnings."""


class _TextExtractor(HTMLParser):
    _BLOCK = {"p", "br", "div", "li", "tr", "h1", "h2", "h3", "h4", "h5", "h6", "pre"}

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []

    def handle_starttag(self, tag, attrs):
        if tag in self._BLOCK:
            self.parts.append("\n")

    def handle_endtag(self, tag):
        if tag in self._BLOCK:
            self.parts.append("\n")

    def handle_data(self, data):
        self.parts.append(data)


_JIRA_MARKUP = [
    (re.compile(r"\{code(?::[^}]*)?\}|\{noformat\}|\{quote\}|\{panel(?::[^}]*)?\}"), ""),
    (re.compile(r"^h[1-6]\.\s*", re.M), ""),
    (re.compile(r"\[([^|\]]+)\|[^\]]+\]"), r"\1"),
    (re.compile(r"(?<!\w)[*_](\S(?:.*?\S)?)[*_](?!\w)"), r"\1"),
]


def strip_markup(text: str) -> str:
    """Reduce HTML / tracker wiki markup to plain text."""
    if "<" in text and ">" in text:
        parser = _TextExtractor()
        parser.feed(text)
        parser.close()
        text = "".join(parser.parts)
    else:
        text = html.unescape(text)
    for pattern, repl in _JIRA_MARKUP:
        text = pattern.sub(repl, text)
    lines = [ln.rstrip() for ln in text.splitlines()]
    text = "\n".join(lines)
    return re.sub(r"\n{3,}", "\n\n", text).strip()


def find_references(description: str, wiki_base_url: Optional[str] = None) -> list[tuple[str, str]]:
    """Return ("story"|"approach", reference) pairs in order of appearance.

    Ticket keys inside a URL belong to the URL, not to the tracker.
    """
    refs: list[tuple[int, str, str]] = []
    url_spans = []
    for m in URL_RE.finditer(description):
        url = m.group(0).rstrip(".,;:")
        url_spans.append((m.start(), m.start() + len(url)))
        is_wiki = url.startswith(wiki_base_url.rstrip("/")) if wiki_base_url else (
            "/wiki/" in url or "confluence" in url
        )
        if is_wiki:
            refs.append((m.start(), "approach", url))
    for m in TICKET_RE.finditer(description):
        if any(a <= m.start() < b for a, b in url_spans):
            continue
        refs.append((m.start(), "story", m.group(0)))
    refs.sort(key=lambda r: r[0])
    seen: set[tuple[str, str]] = set()
    out = []
    for _, kind, ref in refs:
        if (kind, ref) not in seen:
            seen.add((kind, ref))
            out.append((kind, ref))
    return out


def resolve_knowledge_docs(
    description: str, tracker: TrackerClient, wiki: WikiClient
) -> DocList:
    result = DocList()
    for kind, ref in find_references(description or "", getattr(wiki, "base_url", None)):
        try:
            if kind == "story":
                title, body = tracker.fetch_issue(ref)
            else:
                title, body = wiki.fetch_page(ref)
        except (FetchError, OSError) as exc:
            msg = f"could not resolve {kind} reference {ref}: {exc}"
            logger.warning(msg)
            result.warnings.append(msg)
            continue
        result.append(KnowledgeDoc(kind, ref, strip_markup(title), strip_markup(body)))
    return result
