"""Normalization of provider webhook payloads into PullRequestEvent."""

from __future__ import annotations

import hashlib
import hmac
import json
from datetime import datetime, timezone
from typing import Any, Mapping, Optional

from ctxreview.models import CommentInfo, EventKind, ProviderId, PullRequestEvent


class WebhookError(ValueError):
    """Base class for payloads that cannot be turned into an event."""


class UnknownProviderError(WebhookError):
    pass


class MissingFieldError(WebhookError):
    def __init__(self, path: str) -> None:
        super().__init__(f"missing mandatory field: {path}")
        self.path = path


class SignatureError(WebhookError):
    pass


class InvariantError(WebhookError):
    pass


class UnsupportedEventError(WebhookError):
    """Valid payload for an event type the engine does not act on."""


_MISSING = object()


def _get(payload: Any, path: str, default: Any = _MISSING) -> Any:
    node = payload
    for part in path.split("."):
        if isinstance(node, Mapping) and part in node and node[part] is not None:
            node = node[part]
        else:
            if default is _MISSING:
                raise MissingFieldError(path)
            return default
    return node


def verify_signature(
    raw: bytes, provider: ProviderId, headers: Mapping[str, str], secret: str
) -> None:
    """Check the shared-secret header for ``provider``.

    GitHub and Bitbucket sign the body with HMAC-SHA256 ("sha256=<hex>");
    GitLab echoes the secret token verbatim.
    """
    lowered = {k.lower(): v for k, v in headers.items()}
    if provider is ProviderId.GITLAB:
        token = lowered.get("x-gitlab-token")
        if token is None or not hmac.compare_digest(token, secret):
            raise SignatureError("webhook token mismatch")
        return
    sent = lowered.get("x-hub-signature-256") or lowered.get("x-hub-signature")
    if not sent:
        raise SignatureError("missing signature header")
    expected = "sha256=" + hmac.new(secret.encode(), raw, hashlib.sha256).hexdigest()
    if not hmac.compare_digest(sent, expected):
        raise SignatureError("signature mismatch")


def sign_payload(raw: bytes, secret: str) -> str:
    return "sha256=" + hmac.new(secret.encode(), raw, hashlib.sha256).hexdigest()


_GITHUB_ACTIONS = {
    "opened": EventKind.OPENED,
    "reopened": EventKind.OPENED,
    "ready_for_review": EventKind.OPENED,
    "synchronize": EventKind.UPDATED,
    "edited": EventKind.UPDATED,
    "created": EventKind.COMMENT_ADDED,
}
_GITLAB_ACTIONS = {
    "open": EventKind.OPENED,
    "reopen": EventKind.OPENED,
    "update": EventKind.UPDATED,
}
_BITBUCKET_KEYS = {
    "pullrequest:created": EventKind.OPENED,
    "pullrequest:updated": EventKind.UPDATED,
    "pullrequest:comment_created": EventKind.COMMENT_ADDED,
}


def _parse_github(p: Mapping, event_key: Optional[str]) -> dict:
    pr = _get(p, "pull_request")
    action = _get(p, "action", "opened")
    kind = _GITHUB_ACTIONS.get(action)
    if kind is None:
        raise UnsupportedEventError(f"github action {action!r} is not reviewed")
    comment = None
    if "comment" in p:
        kind = EventKind.COMMENT_ADDED
        comment = CommentInfo(
            comment_id=str(_get(p, "comment.id")),
            body=_get(p, "comment.body"),
            author=_get(p, "comment.user.login", ""),
            file_path=_get(p, "comment.path", None),
            line_number=_get(p, "comment.line", None),
        )
    return dict(
        repo_url=_get(p, "repository.clone_url"),
        repo_id=_get(p, "repository.full_name"),
        pr_number=_get(pr, "number"),
        source_branch=_get(pr, "head.ref"),
        target_branch=_get(pr, "base.ref"),
        title=_get(pr, "title"),
        description=_get(pr, "body", ""),
        author=_get(pr, "user.login"),
        event_kind=kind,
        comment=comment,
    )


def _parse_gitlab(p: Mapping, event_key: Optional[str]) -> dict:
    object_kind = _get(p, "object_kind")
    comment = None
    if object_kind == "merge_request":
        mr = _get(p, "object_attributes")
        action = _get(mr, "action", "open")
        kind = _GITLAB_ACTIONS.get(action)
        if kind is None:
            raise UnsupportedEventError(f"gitlab action {action!r} is not reviewed")
        author = _get(p, "user.username")
    elif object_kind == "note":
        mr = _get(p, "merge_request")
        kind = EventKind.COMMENT_ADDED
        note = _get(p, "object_attributes")
        comment = CommentInfo(
            comment_id=str(_get(note, "id")),
            body=_get(note, "note"),
            author=_get(p, "user.username", ""),
            file_path=_get(note, "position.new_path", None),
            line_number=_get(note, "position.new_line", None),
        )
        author = _get(mr, "author_username", "") or _get(p, "user.username", "")
    else:
        raise UnsupportedEventError(f"gitlab object_kind {object_kind!r} is not reviewed")
    return dict(
        repo_url=_get(p, "project.git_http_url"),
        repo_id=_get(p, "project.path_with_namespace"),
        pr_number=_get(mr, "iid"),
        source_branch=_get(mr, "source_branch"),
        target_branch=_get(mr, "target_branch"),
        title=_get(mr, "title"),
        description=_get(mr, "description", ""),
        author=author,
        event_kind=kind,
        comment=comment,
    )


def _parse_bitbucket(p: Mapping, event_key: Optional[str]) -> dict:
    pr = _get(p, "pullrequest")
    if event_key is not None:
        kind = _BITBUCKET_KEYS.get(event_key)
        if kind is None:
            raise UnsupportedEventError(f"bitbucket event {event_key!r} is not reviewed")
    else:
        kind = EventKind.COMMENT_ADDED if "comment" in p else EventKind.OPENED
    comment = None
    if kind is EventKind.COMMENT_ADDED:
        comment = CommentInfo(
            comment_id=str(_get(p, "comment.id")),
            body=_get(p, "comment.content.raw"),
            author=_get(p, "comment.user.nickname", ""),
            file_path=_get(p, "comment.inline.path", None),
            line_number=_get(p, "comment.inline.to", None),
        )
    return dict(
        repo_url=_get(p, "repository.links.html.href"),
        repo_id=_get(p, "repository.full_name"),
        pr_number=_get(pr, "id"),
        source_branch=_get(pr, "source.branch.name"),
        target_branch=_get(pr, "destination.branch.name"),
        title=_get(pr, "title"),
        description=_get(pr, "description", ""),
        author=_get(pr, "author.nickname", None) or _get(pr, "author.display_name"),
        event_kind=kind,
        comment=comment,
    )


_PARSERS = {
    ProviderId.GITHUB: _parse_github,
    ProviderId.GITLAB: _parse_gitlab,
    ProviderId.BITBUCKET: _parse_bitbucket,
}


def _provider(value: Any) -> ProviderId:
    try:
        return ProviderId(value)
    except ValueError:
        raise UnknownProviderError(f"unknown provider: {value!r}") from None


def parse_webhook(
    raw: bytes,
    provider: ProviderId | str,
    *,
    headers: Optional[Mapping[str, str]] = None,
    secret: Optional[str] = None,
    received_at: Optional[datetime] = None,
) -> PullRequestEvent:
    """Map a provider-native payload to a PullRequestEvent.

    Bitbucket carries its action in the ``X-Event-Key`` header; when no
    header is given the payload shape decides (comment present or not).
    """
    provider = _provider(provider)
    headers = headers or {}
    if secret:
        verify_signature(raw, provider, headers, secret)
    try:
        payload = json.loads(raw)
    except (ValueError, UnicodeDecodeError) as exc:
        raise WebhookError(f"payload is not valid JSON: {exc}") from None
    if not isinstance(payload, Mapping):
        raise WebhookError("payload must be a JSON object")
    lowered = {k.lower(): v for k, v in headers.items()}
    fields = _PARSERS[provider](payload, lowered.get("x-event-key"))

    pr_number = fields["pr_number"]
    if isinstance(pr_number, bool) or not isinstance(pr_number, int) or pr_number <= 0:
        raise InvariantError(f"pr number must be a positive integer, got {pr_number!r}")
    for name in ("repo_url", "repo_id", "source_branch", "target_branch", "title", "author"):
        if not isinstance(fields[name], str):
            raise WebhookError(f"field {name} must be a string")
    if not fields["title"].strip():
        raise InvariantError("title must be non-empty")
    if fields["source_branch"] == fields["target_branch"]:
        raise InvariantError("branch invariant violated: source and target branch are equal")
    if not isinstance(fields["description"], str):
        fields["description"] = ""
    return PullRequestEvent(
        provider_id=provider,
        received_at=received_at or datetime.now(timezone.utc),
        **fields,
    )
