"""VCS, issue-tracker and wiki integrations."""

from ctxreview.integrations.clients import (
    BitbucketClient,
    BranchNotFoundError,
    ConfluenceClient,
    FetchError,
    GitHubClient,
    GitLabClient,
    InMemoryTracker,
    InMemoryVcsClient,
    InMemoryWiki,
    JiraClient,
    LineNotInDiffError,
    LocalGitClient,
    OversizedDiffError,
    PostedComment,
    ProviderRejection,
    TrackerClient,
    VcsClient,
    VcsError,
    WikiClient,
)
from ctxreview.integrations.diff import DiffParseError, FileDiff, Hunk, UnifiedDiff, parse_unified_diff
from ctxreview.integrations.events import (
    InvariantError,
    MissingFieldError,
    SignatureError,
    UnknownProviderError,
    UnsupportedEventError,
    WebhookError,
    parse_webhook,
    sign_payload,
)
from ctxreview.integrations.knowledge import DocList, resolve_knowledge_docs
from ctxreview.integrations.pr import PostReceipt, fetch_diff, post_notice, post_review
