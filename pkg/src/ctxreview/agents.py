"""Review agents: a free-form first pass, then a reflection pass that emits XML.

Each agent makes two model calls.  The first sees the agent's context
bundle and answers in prose.  The second sees the same bundle plus that
prose, corrects it, and renders the result in the review XML schema; its
parsed comments are the agent's output.  If the XML cannot be parsed the
agent asks once more for a clean conversion and then gives up.
"""

from __future__ import annotations

import html
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ctxreview.context import OptimizedContext, ReflectionWithoutReviewError, bundle_for_agent
from ctxreview.llm import Gateway, LlmError
from ctxreview.models import AgentKind, ReviewComment, ReviewPass, WarningList

logger = logging.getLogger(__name__)

XML_SCHEMA = """<review>
  <comments>
    <comment>
      <description></description>
      <corrective_code></corrective_code>
      <file_path></file_path>
      <line_number></line_number>
      <confidence_score></confidence_score>
      <bucket></bucket>
    </comment>
  </comments>
</review>"""

MANDATORY_FIELDS = ("description", "file_path", "line_number", "confidence_score", "bucket")
ALL_FIELDS = ("description", "corrective_code") + MANDATORY_FIELDS[1:]

DEFAULT_THRESHOLDS = {
    AgentKind.SECURITY: 0.7,
    AgentKind.ERROR: 0.7,
    AgentKind.CODE_COMMUNICATION: 0.6,
    AgentKind.PERFORMANCE_OPTIMIZATION: 0.6,
    AgentKind.CODE_MAINTAINABILITY: 0.6,
    AgentKind.BUSINESS_LOGIC_VALIDATION: 0.6,
}

FOCUS = {
    AgentKind.SECURITY: (
        "security",
        "vulnerabilities such as SQL/command/template injection, missing or weak input "
        "validation, secrets committed to code, unsafe deserialization, outdated or "
        "vulnerable dependencies, and broken authentication or authorization checks",
    ),
    AgentKind.CODE_COMMUNICATION: (
        "code communication",
        "missing, stale or misleading docstrings and comments, unclear naming in public "
        "interfaces, and logging that is absent, noisy, leaks data or uses the wrong level",
    ),
    AgentKind.PERFORMANCE_OPTIMIZATION: (
        "performance",
        "avoidable time or memory complexity, repeated work inside loops, N+1 or unindexed "
        "database queries, blocking calls on hot paths, and needless copies or allocations",
    ),
    AgentKind.CODE_MAINTAINABILITY: (
        "maintainability",
        "duplication, overly long or deeply nested functions, poor cohesion, unclear "
        "abstractions, magic values, and anything that makes the code hard to read or reuse",
    ),
    AgentKind.ERROR: (
        "errors",
        "logic mistakes, unhandled exceptions, wrong edge-case behaviour, type or syntax "
        "errors, and callers elsewhere in the repository that the change will break",
    ),
    AgentKind.BUSINESS_LOGIC_VALIDATION: (
        "business logic",
        "whether the change actually implements the linked user story and approach "
        "document, requirements it misses or contradicts, and behaviour nobody asked for",
    ),
}


# --- XML parsing --------------------------------------------------------------


class XmlSchemaError(ValueError):
    """The response contains no usable <review> document."""


@dataclass(frozen=True)
class ParseWarning:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


_REVIEW_OPEN = re.compile(r"<review\s*>", re.I)
_REVIEW_CLOSE = re.compile(r"</review\s*>", re.I)
_COMMENT_RE = re.compile(r"<comment\s*>(.*?)(?:</comment\s*>|(?=<comment\s*>)|$)", re.S | re.I)
_CDATA_RE = re.compile(r"^\s*<!\[CDATA\[(.*)\]\]>\s*$", re.S)


def _field_values(block: str, name: str) -> list[str]:
    return re.findall(rf"<{name}\s*>(.*?)</{name}\s*>", block, re.S | re.I)


def _clean(raw: str, *, code: bool = False) -> str:
    m = _CDATA_RE.match(raw)
    text = m.group(1) if m else html.unescape(raw)
    if code:
        return text.strip("\n").rstrip()
    return text.strip()


def parse_agent_xml(text: str, agent: AgentKind) -> WarningList:
    """Extract review comments from a model response.

    Prose around the ``<review>`` element is ignored.  Comments missing a
    mandatory field, or with an unusable line number or confidence, are
    skipped with a warning; confidences outside [0, 1] are clamped.
    Raises XmlSchemaError when there is no complete ``<review>`` element.
    """
    opens = list(_REVIEW_OPEN.finditer(text or ""))
    if not opens:
        raise XmlSchemaError("missing <review> root element")
    close = _REVIEW_CLOSE.search(text, opens[0].end())
    if close is None:
        raise XmlSchemaError("unterminated <review> element")
    body = text[opens[0].end() : close.start()]
    result = WarningList()
    warn = result.warnings.append
    if len(opens) > 1:
        warn(ParseWarning("multiple-reviews", "more than one <review> element; using the first"))
    if not re.search(r"<comments\s*>", body, re.I) and re.search(r"<comment\s*>", body, re.I):
        warn(ParseWarning("missing-comments-wrapper", "<comment> elements outside <comments>"))

    for index, m in enumerate(_COMMENT_RE.finditer(body), start=1):
        block = m.group(1)
        if not re.search(r"</comment\s*>\s*$", m.group(0), re.I):
            warn(ParseWarning("unterminated-comment", f"comment {index} is not closed"))
        values: dict[str, str] = {}
        for name in ALL_FIELDS:
            found = _field_values(block, name)
            if len(found) > 1:
                warn(ParseWarning("duplicate-field", f"comment {index} repeats <{name}>; using the first"))
            if found:
                values[name] = _clean(found[0], code=(name == "corrective_code"))
        missing = [n for n in MANDATORY_FIELDS if not values.get(n)]
        if missing:
            warn(ParseWarning("missing-field", f"comment {index} lacks {', '.join(missing)}; skipped"))
            continue
        try:
            line = int(values["line_number"])
        except ValueError:
            warn(ParseWarning("bad-line-number", f"comment {index} line_number {values['line_number']!r}; skipped"))
            continue
        if line <= 0:
            warn(ParseWarning("bad-line-number", f"comment {index} line_number {line} is not positive; skipped"))
            continue
        try:
            confidence = float(values["confidence_score"])
        except ValueError:
            confidence = math.nan
        if math.isnan(confidence):
            warn(ParseWarning("bad-confidence", f"comment {index} confidence {values['confidence_score']!r}; skipped"))
            continue
        if not 0.0 <= confidence <= 1.0:
            clamped = min(1.0, max(0.0, confidence))
            warn(ParseWarning("confidence-clamped", f"comment {index} confidence {confidence} clamped to {clamped}"))
            confidence = clamped
        result.append(
            ReviewComment(
                description=values["description"],
                corrective_code=values.get("corrective_code") or None,
                file_path=values["file_path"],
                line_number=line,
                confidence_score=confidence,
                bucket=values["bucket"],
                agent=agent,
            )
        )
    return result


# --- prompts ------------------------------------------------------------------


def system_prompt(agent: AgentKind) -> str:
    area, scope = FOCUS[agent]
    return (
        f"You are an experienced code reviewer responsible only for {area}. "
        f"Look for {scope}. Ignore issues outside this area; other reviewers cover them. "
        "Refer to code by its path and its line number in the new version of the file."
    )


def single_pass_prompt(context_text: str, agent: AgentKind) -> str:
    area, _ = FOCUS[agent]
    return (
        f"{context_text}\n\n"
        f"Review the diff above for {area} problems. For every finding give the file path, "
        "the new-file line number, what is wrong, a corrected snippet if one helps, a bucket "
        "naming the kind of issue, and how confident you are on a scale from 0 to 1. "
        "If you find nothing worth raising, say so."
    )


def reflection_prompt(context_text: str, agent: AgentKind) -> str:
    return (
        f"{context_text}\n\n"
        "Reread your initial review against the code. Drop findings that are wrong, "
        "speculative or out of scope, correct line numbers and suggested fixes, and add "
        "anything important you missed. Then answer with only the final review in exactly "
        f"this XML format, one <comment> per finding:\n\n{XML_SCHEMA}\n\n"
        "Use an empty <comments></comments> element if nothing remains."
    )


def reask_prompt(bad_output: str) -> str:
    return (
        "The following review could not be parsed. Rewrite it as a single well-formed XML "
        "document in exactly this format and output nothing else:\n\n"
        f"{XML_SCHEMA}\n\nReview to convert:\n{bad_output}"
    )


# --- running agents -----------------------------------------------------------


@dataclass
class AgentResult:
    agent: AgentKind
    single_pass_text: str = ""
    reflection_text: str = ""
    comments: list[ReviewComment] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    reasks: int = 0
    parse_failed: bool = False
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


class NoAgentResultsError(RuntimeError):
    pass


def anchor_comments(comments: Sequence[ReviewComment], ctx: OptimizedContext, warnings: list[str]) -> list[ReviewComment]:
    """Keep comments on files in the diff; demote lines outside the diff to file level."""
    out = []
    for c in comments:
        f = ctx.pr_diff.file(c.file_path)
        if f is None:
            warnings.append(f"{c.agent.value}: dropped comment on {c.file_path}, which the diff does not touch")
            continue
        if c.line_number not in f.visible_lines():
            warnings.append(f"{c.agent.value}: {c.file_path}:{c.line_number} not visible in diff; file-level")
            c = ReviewComment(**{**c.__dict__, "file_level": True})
        out.append(c)
    return out


def run_agent(
    agent: AgentKind,
    ctx: OptimizedContext,
    gateway: Gateway,
    *,
    token_budget: Optional[int] = None,
) -> AgentResult:
    result = AgentResult(agent)
    try:
        first = bundle_for_agent(ctx, agent, ReviewPass.SINGLE_PASS, token_budget=token_budget)
        result.warnings.extend(first.warnings)
        req = gateway.request(system_prompt(agent), single_pass_prompt(first.text, agent))
        result.single_pass_text = gateway.complete(req, agent=agent, review_pass=ReviewPass.SINGLE_PASS).text

        second = bundle_for_agent(
            ctx, agent, ReviewPass.REFLECTION, result.single_pass_text, token_budget=token_budget
        )
        req = gateway.request(system_prompt(agent), reflection_prompt(second.text, agent), structured_mode=True)
        result.reflection_text = gateway.complete(req, agent=agent, review_pass=ReviewPass.REFLECTION).text
        try:
            parsed = parse_agent_xml(result.reflection_text, agent)
        except XmlSchemaError as first_error:
            result.reasks = 1
            req = gateway.request(system_prompt(agent), reask_prompt(result.reflection_text), structured_mode=True)
            retry_text = gateway.complete(req, agent=agent, review_pass=ReviewPass.REFLECTION).text
            try:
                parsed = parse_agent_xml(retry_text, agent)
                result.reflection_text = retry_text
            except XmlSchemaError as exc:
                result.parse_failed = True
                result.warnings.append(f"{agent.value}: unparseable review after re-ask ({first_error}; {exc})")
                return result
    except (LlmError, ReflectionWithoutReviewError) as exc:
        result.error = f"{exc.__class__.__name__}: {exc}"
        logger.warning("agent %s failed: %s", agent.value, result.error)
        return result
    result.warnings.extend(f"{agent.value}: {w}" for w in parsed.warnings)
    result.comments = anchor_comments(parsed, ctx, result.warnings)
    return result


def run_all_agents(
    ctx: OptimizedContext,
    agents: Sequence[AgentKind],
    gateway: Gateway,
    *,
    token_budget: Optional[int] = None,
    max_workers: Optional[int] = None,
) -> list[AgentResult]:
    """Run agents concurrently; results come back in canonical agent order.

    Failed agents are returned with ``error`` set.  Raises NoAgentResultsError
    when every agent failed.
    """
    enabled = sorted(set(agents), key=lambda a: a.rank)
    if not enabled:
        raise ValueError("at least one agent must be enabled")
    with ThreadPoolExecutor(max_workers=max_workers or len(enabled)) as pool:
        futures = [pool.submit(run_agent, a, ctx, gateway, token_budget=token_budget) for a in enabled]
        results = [f.result() for f in futures]
    if all(r.failed for r in results):
        raise NoAgentResultsError("no agent results: " + "; ".join(f"{r.agent.value}: {r.error}" for r in results))
    return results
