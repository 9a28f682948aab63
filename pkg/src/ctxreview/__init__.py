"""Contextual code review: AST-chunked retrieval, multi-agent review with reflection, blending."""

from ctxreview.config import EngineConfig, load_config
from ctxreview.models import (
    AgentKind,
    CodeChunk,
    KnowledgeDoc,
    PrSummary,
    PullRequestEvent,
    ReviewComment,
    ReviewReport,
)
from ctxreview.pipeline import RunOutcome, RunReport, review_local, review_pull_request

__all__ = [
    "AgentKind",
    "CodeChunk",
    "EngineConfig",
    "KnowledgeDoc",
    "PrSummary",
    "PullRequestEvent",
    "ReviewComment",
    "ReviewReport",
    "RunOutcome",
    "RunReport",
    "load_config",
    "review_local",
    "review_pull_request",
]

__version__ = "0.1.0"
