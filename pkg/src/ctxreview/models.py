"""Domain types shared across the review pipeline."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime
from typing import Optional


class ProviderId(str, enum.Enum):
    GITHUB = "github"
    GITLAB = "gitlab"
    BITBUCKET = "bitbucket"


class EventKind(str, enum.Enum):
    OPENED = "opened"
    UPDATED = "updated"
    COMMENT_ADDED = "comment-added"


class AgentKind(str, enum.Enum):
    """The six review personas, declared in canonical order."""

    SECURITY = "security"
    CODE_COMMUNICATION = "code-communication"
    PERFORMANCE_OPTIMIZATION = "performance-optimization"
    CODE_MAINTAINABILITY = "code-maintainability"
    ERROR = "error"
    BUSINESS_LOGIC_VALIDATION = "business-logic-validation"

    @property
    def rank(self) -> int:
        return _AGENT_ORDER[self]

    @property
    def label(self) -> str:
        return self.value.replace("-", " ").capitalize()


_AGENT_ORDER = {kind: i for i, kind in enumerate(AgentKind)}


class ReviewPass(str, enum.Enum):
    SINGLE_PASS = "single-pass"
    REFLECTION = "reflection"


class SizeClass(str, enum.Enum):
    S = "S"
    M = "M"
    L = "L"
    XL = "XL"
    XXL = "XXL"


@dataclass(frozen=True)
class CommentInfo:
    """A PR comment carried by a comment-added event."""

    comment_id: str
    body: str
    author: str
    file_path: Optional[str] = None
    line_number: Optional[int] = None


@dataclass(frozen=True)
class PullRequestEvent:
    provider_id: ProviderId
    repo_url: str
    repo_id: str
    pr_number: int
    source_branch: str
    target_branch: str
    title: str
    description: str
    author: str
    event_kind: EventKind
    received_at: datetime
    comment: Optional[CommentInfo] = None

    @property
    def pr_ref(self) -> tuple[str, int]:
        return (self.repo_id, self.pr_number)


@dataclass(frozen=True)
class KnowledgeDoc:
    source: str  # "story" (issue tracker) or "approach" (wiki)
    external_key: str
    title: str
    body: str


@dataclass(frozen=True)
class CodeChunk:
    chunk_id: str
    repo_id: str
    file_path: str
    start_line: int
    end_line: int
    symbol_kind: str  # function, method, class, module-top-level, other
    symbol_name: str
    content: str
    enclosing_scope: Optional[str] = None

    @property
    def qualified_name(self) -> str:
        if self.enclosing_scope:
            return f"{self.enclosing_scope}.{self.symbol_name}"
        return self.symbol_name

    @property
    def line_count(self) -> int:
        return self.end_line - self.start_line + 1

    def contains_line(self, line: int) -> bool:
        return self.start_line <= line <= self.end_line


@dataclass(frozen=True)
class ReviewComment:
    description: str
    file_path: str
    line_number: int
    confidence_score: float
    bucket: str
    agent: AgentKind
    corrective_code: Optional[str] = None
    # set when the target line is not visible in the diff
    file_level: bool = False
    contributors: tuple[AgentKind, ...] = ()

    @property
    def location(self) -> tuple[str, int]:
        return (self.file_path, self.line_number)

    def to_dict(self) -> dict:
        return {
            "description": self.description,
            "corrective_code": self.corrective_code,
            "file_path": self.file_path,
            "line_number": self.line_number,
            "confidence_score": self.confidence_score,
            "bucket": self.bucket,
            "agent": self.agent.value,
            "file_level": self.file_level,
            "contributors": [a.value for a in self.contributors],
        }


@dataclass(frozen=True)
class PrSummary:
    summary_text: str
    changed_loc: int
    size_class: SizeClass
    estimated_review_minutes: int
    degraded: bool = False

    def to_dict(self) -> dict:
        return {
            "summary_text": self.summary_text,
            "changed_loc": self.changed_loc,
            "size_class": self.size_class.value,
            "estimated_review_minutes": self.estimated_review_minutes,
            "degraded": self.degraded,
        }


@dataclass
class ReviewReport:
    pr_ref: tuple[str, int]
    comments: list[ReviewComment]
    summary: Optional[PrSummary] = None
    dropped_count_by_dimension: dict[str, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "pr_ref": {"repo_id": self.pr_ref[0], "pr_number": self.pr_ref[1]},
            "comments": [c.to_dict() for c in self.comments],
            "summary": self.summary.to_dict() if self.summary else None,
            "dropped_count_by_dimension": dict(self.dropped_count_by_dimension),
            "warnings": list(self.warnings),
        }


class WarningList(list):
    """A plain list that also carries the non-fatal warnings raised building it."""

    def __init__(self, items=(), warnings=None) -> None:
        super().__init__(items)
        self.warnings: list[str] = list(warnings or [])
