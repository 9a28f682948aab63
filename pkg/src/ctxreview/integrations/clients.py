"""Version-control, issue-tracker and wiki client interfaces.

Every client has an in-memory stub that the tests drive, plus a thin HTTP
adapter for the live service.  All clients are safe to share between
concurrent review jobs: stubs lock their state, adapters keep none.
"""

from __future__ import annotations

import difflib
import itertools
import re
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import httpx

from ctxreview.integrations.diff import parse_unified_diff
from ctxreview.models import PullRequestEvent


class VcsError(RuntimeError):
    pass


class BranchNotFoundError(VcsError):
    pass


class VcsAuthError(VcsError):
    pass


class ProviderRejection(VcsError):
    """Transient refusal by the provider (rate limit, 5xx); worth retrying."""


class LineNotInDiffError(VcsError):
    """The provider cannot anchor an inline comment at the requested line."""


class OversizedDiffError(VcsError):
    def __init__(self, changed_loc: int, limit: int) -> None:
        super().__init__(f"oversized PR: {changed_loc} changed LOC exceeds limit {limit}")
        self.changed_loc = changed_loc
        self.limit = limit


class FetchError(RuntimeError):
    pass


@dataclass(frozen=True)
class PostedComment:
    comment_id: str
    body: str
    kind: str  # inline, file, pr, reply
    path: Optional[str] = None
    line: Optional[int] = None
    parent_id: Optional[str] = None


class VcsClient(Protocol):
    def fetch_diff_text(self, event: PullRequestEvent) -> str: ...

    def list_comments(self, event: PullRequestEvent) -> list[PostedComment]: ...

    def post_inline_comment(
        self, event: PullRequestEvent, path: str, line: int, body: str
    ) -> str: ...

    def post_file_comment(self, event: PullRequestEvent, path: str, body: str) -> str: ...

    def post_pr_comment(self, event: PullRequestEvent, body: str) -> str: ...

    def reply_to_comment(self, event: PullRequestEvent, parent_id: str, body: str) -> str: ...


class TrackerClient(Protocol):
    def fetch_issue(self, key: str) -> tuple[str, str]:
        """Return (title, body) for an issue key; raise FetchError if unavailable."""
        ...


class WikiClient(Protocol):
    base_url: Optional[str]

    def fetch_page(self, url: str) -> tuple[str, str]: ...


def make_unified_diff(old: dict[str, str], new: dict[str, str], context: int = 3) -> str:
    """Render a git-style diff between two {path: content} snapshots."""
    out: list[str] = []
    for path in sorted(set(old) | set(new)):
        a, b = old.get(path), new.get(path)
        if a == b:
            continue
        a_lines = (a or "").splitlines(keepends=True)
        b_lines = (b or "").splitlines(keepends=True)
        header = [f"diff --git a/{path} b/{path}"]
        if a is None:
            header.append("new file mode 100644")
        elif b is None:
            header.append("deleted file mode 100644")
        out.extend(h + "\n" for h in header)
        for ln in difflib.unified_diff(
            a_lines,
            b_lines,
            "/dev/null" if a is None else f"a/{path}",
            "/dev/null" if b is None else f"b/{path}",
            n=context,
        ):
            if ln.endswith("\n"):
                out.append(ln)
            else:
                out.append(ln + "\n\\ No newline at end of file\n")
    return "".join(out)


class InMemoryVcsClient:
    """Provider stub holding repository snapshots and posted comments.

    ``branches`` maps repo-id -> branch -> {path: content}.  Inline comments
    are only accepted on lines visible in the current diff, mimicking how the
    real providers reject stale positions after a force-push.
    """

    def __init__(self) -> None:
        self.branches: dict[str, dict[str, dict[str, str]]] = {}
        self.diff_overrides: dict[tuple[str, int], str] = {}
        self.comments: dict[tuple[str, int], list[PostedComment]] = {}
        self.reject_next = 0
        self.calls: list[str] = []
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def add_branch(self, repo_id: str, branch: str, files: dict[str, str]) -> None:
        with self._lock:
            self.branches.setdefault(repo_id, {})[branch] = dict(files)

    def _snapshot(self, repo_id: str, branch: str) -> dict[str, str]:
        try:
            return self.branches[repo_id][branch]
        except KeyError:
            raise BranchNotFoundError(f"branch {branch!r} not found in {repo_id}") from None

    def fetch_diff_text(self, event: PullRequestEvent) -> str:
        with self._lock:
            self.calls.append("fetch_diff")
            override = self.diff_overrides.get(event.pr_ref)
            if override is not None:
                return override
            old = self._snapshot(event.repo_id, event.target_branch)
            new = self._snapshot(event.repo_id, event.source_branch)
            return make_unified_diff(old, new)

    def list_comments(self, event: PullRequestEvent) -> list[PostedComment]:
        with self._lock:
            return list(self.comments.get(event.pr_ref, []))

    def _post(self, event: PullRequestEvent, **kw) -> str:
        with self._lock:
            self.calls.append(f"post_{kw['kind']}")
            if self.reject_next > 0:
                self.reject_next -= 1
                raise ProviderRejection("provider temporarily rejected the request")
            cid = str(next(self._ids))
            self.comments.setdefault(event.pr_ref, []).append(PostedComment(cid, **kw))
            return cid

    def post_inline_comment(self, event: PullRequestEvent, path: str, line: int, body: str) -> str:
        diff = parse_unified_diff(self.fetch_diff_text(event))
        f = diff.file(path)
        if f is None or line not in f.visible_lines():
            raise LineNotInDiffError(f"{path}:{line} is not part of the diff")
        return self._post(event, body=body, kind="inline", path=path, line=line)

    def post_file_comment(self, event: PullRequestEvent, path: str, body: str) -> str:
        return self._post(event, body=body, kind="file", path=path)

    def post_pr_comment(self, event: PullRequestEvent, body: str) -> str:
        return self._post(event, body=body, kind="pr")

    def reply_to_comment(self, event: PullRequestEvent, parent_id: str, body: str) -> str:
        return self._post(event, body=body, kind="reply", parent_id=parent_id)


def run_git(repo: str | Path, *args: str) -> str:
    proc = subprocess.run(
        ["git", "-C", str(repo), *args],
        capture_output=True,
        check=False,
    )
    if proc.returncode != 0:
        err = proc.stderr.decode("utf-8", "replace").strip()
        raise VcsError(err or f"git {' '.join(args)} failed")
    # bytes-exact: no newline translation
    return proc.stdout.decode("utf-8", "surrogateescape")


class LocalGitClient:
    """Reads diffs from a local working tree; collects posts in memory (dry run)."""

    def __init__(self, repo_path: str | Path) -> None:
        self.repo_path = Path(repo_path)
        try:
            inside = run_git(self.repo_path, "rev-parse", "--is-inside-work-tree").strip()
        except (VcsError, FileNotFoundError, NotADirectoryError):
            inside = ""
        if inside != "true":
            raise VcsError(f"{repo_path} is not a git working tree")
        self.posted: list[PostedComment] = []
        self._lock = threading.Lock()

    def resolve(self, ref: str) -> str:
        try:
            return run_git(self.repo_path, "rev-parse", "--verify", "--quiet", ref + "^{commit}").strip()
        except VcsError:
            raise BranchNotFoundError(f"unknown ref {ref!r}") from None

    def diff_text(self, base: str, head: str) -> str:
        self.resolve(base)
        self.resolve(head)
        return run_git(self.repo_path, "diff", "--no-color", "--no-ext-diff", f"{base}...{head}")

    def fetch_diff_text(self, event: PullRequestEvent) -> str:
        return self.diff_text(event.target_branch, event.source_branch)

    def list_comments(self, event: PullRequestEvent) -> list[PostedComment]:
        with self._lock:
            return list(self.posted)

    def _record(self, **kw) -> str:
        with self._lock:
            cid = f"local-{len(self.posted) + 1}"
            self.posted.append(PostedComment(cid, **kw))
            return cid

    def post_inline_comment(self, event, path, line, body):
        return self._record(body=body, kind="inline", path=path, line=line)

    def post_file_comment(self, event, path, body):
        return self._record(body=body, kind="file", path=path)

    def post_pr_comment(self, event, body):
        return self._record(body=body, kind="pr")

    def reply_to_comment(self, event, parent_id, body):
        return self._record(body=body, kind="reply", parent_id=parent_id)


# --- live HTTP adapters -------------------------------------------------------


def _raise_for(resp: httpx.Response, *, inline: bool = False) -> None:
    if resp.status_code < 400:
        return
    if resp.status_code in (401, 403):
        raise VcsAuthError(f"{resp.request.url}: {resp.status_code}")
    if resp.status_code == 404:
        raise BranchNotFoundError(f"{resp.request.url}: not found")
    if inline and resp.status_code in (400, 422):
        raise LineNotInDiffError(resp.text[:200])
    if resp.status_code == 429 or resp.status_code >= 500:
        raise ProviderRejection(f"{resp.request.url}: {resp.status_code}")
    raise VcsError(f"{resp.request.url}: {resp.status_code} {resp.text[:200]}")


class _HttpClient:
    def __init__(self, base_url: str, headers: dict[str, str], timeout: float = 30.0) -> None:
        self._http = httpx.Client(base_url=base_url, headers=headers, timeout=timeout)

    def _get(self, url: str, **kw) -> httpx.Response:
        try:
            resp = self._http.get(url, **kw)
        except httpx.TransportError as exc:
            raise ProviderRejection(str(exc)) from exc
        _raise_for(resp)
        return resp

    def _post_json(self, url: str, payload: dict, *, inline: bool = False) -> dict:
        try:
            resp = self._http.post(url, json=payload)
        except httpx.TransportError as exc:
            raise ProviderRejection(str(exc)) from exc
        _raise_for(resp, inline=inline)
        return resp.json()


class GitHubClient(_HttpClient):
    def __init__(self, token: str, api_url: str = "https://api.github.com") -> None:
        super().__init__(
            api_url,
            {"Authorization": f"Bearer {token}", "Accept": "application/vnd.github+json"},
        )

    def _pr(self, event: PullRequestEvent) -> str:
        return f"/repos/{event.repo_id}/pulls/{event.pr_number}"

    def fetch_diff_text(self, event):
        return self._get(self._pr(event), headers={"Accept": "application/vnd.github.v3.diff"}).text

    def list_comments(self, event):
        out = []
        for c in self._get(self._pr(event) + "/comments").json():
            out.append(PostedComment(str(c["id"]), c["body"], "inline", c.get("path"), c.get("line")))
        issue = f"/repos/{event.repo_id}/issues/{event.pr_number}/comments"
        for c in self._get(issue).json():
            out.append(PostedComment(str(c["id"]), c["body"], "pr"))
        return out

    def _head_sha(self, event) -> str:
        return self._get(self._pr(event)).json()["head"]["sha"]

    def post_inline_comment(self, event, path, line, body):
        payload = {"body": body, "commit_id": self._head_sha(event), "path": path, "line": line, "side": "RIGHT"}
        return str(self._post_json(self._pr(event) + "/comments", payload, inline=True)["id"])

    def post_file_comment(self, event, path, body):
        payload = {"body": body, "commit_id": self._head_sha(event), "path": path, "subject_type": "file"}
        return str(self._post_json(self._pr(event) + "/comments", payload)["id"])

    def post_pr_comment(self, event, body):
        url = f"/repos/{event.repo_id}/issues/{event.pr_number}/comments"
        return str(self._post_json(url, {"body": body})["id"])

    def reply_to_comment(self, event, parent_id, body):
        url = self._pr(event) + f"/comments/{parent_id}/replies"
        return str(self._post_json(url, {"body": body})["id"])


class GitLabClient(_HttpClient):
    def __init__(self, token: str, api_url: str = "https://gitlab.com/api/v4") -> None:
        super().__init__(api_url, {"PRIVATE-TOKEN": token})

    def _mr(self, event: PullRequestEvent) -> str:
        project = httpx.URL("/" + event.repo_id).raw_path.decode().lstrip("/").replace("/", "%2F")
        return f"/projects/{project}/merge_requests/{event.pr_number}"

    def fetch_diff_text(self, event):
        changes = self._get(self._mr(event) + "/changes").json()["changes"]
        parts = []
        for ch in changes:
            old, new = ch["old_path"], ch["new_path"]
            parts.append(f"diff --git a/{old} b/{new}\n")
            parts.append(f"--- {'/dev/null' if ch.get('new_file') else 'a/' + old}\n")
            parts.append(f"+++ {'/dev/null' if ch.get('deleted_file') else 'b/' + new}\n")
            body = ch["diff"]
            parts.append(body if body.endswith("\n") or not body else body + "\n")
        return "".join(parts)

    def list_comments(self, event):
        notes = self._get(self._mr(event) + "/notes").json()
        return [PostedComment(str(n["id"]), n["body"], "pr") for n in notes]

    def post_inline_comment(self, event, path, line, body):
        refs = self._get(self._mr(event)).json()["diff_refs"]
        position = {
            "position_type": "text",
            "base_sha": refs["base_sha"],
            "start_sha": refs["start_sha"],
            "head_sha": refs["head_sha"],
            "new_path": path,
            "new_line": line,
        }
        data = self._post_json(self._mr(event) + "/discussions", {"body": body, "position": position}, inline=True)
        return str(data["id"])

    def post_file_comment(self, event, path, body):
        return self.post_pr_comment(event, f"**{path}**\n\n{body}")

    def post_pr_comment(self, event, body):
        return str(self._post_json(self._mr(event) + "/notes", {"body": body})["id"])

    def reply_to_comment(self, event, parent_id, body):
        url = self._mr(event) + f"/discussions/{parent_id}/notes"
        return str(self._post_json(url, {"body": body})["id"])


class BitbucketClient(_HttpClient):
    def __init__(self, token: str, api_url: str = "https://api.bitbucket.org/2.0") -> None:
        super().__init__(api_url, {"Authorization": f"Bearer {token}"})

    def _pr(self, event: PullRequestEvent) -> str:
        return f"/repositories/{event.repo_id}/pullrequests/{event.pr_number}"

    def fetch_diff_text(self, event):
        return self._get(self._pr(event) + "/diff", follow_redirects=True).text

    def list_comments(self, event):
        values = self._get(self._pr(event) + "/comments").json().get("values", [])
        out = []
        for c in values:
            inline = c.get("inline") or {}
            out.append(
                PostedComment(str(c["id"]), c["content"]["raw"], "inline" if inline else "pr", inline.get("path"), inline.get("to"))
            )
        return out

    def post_inline_comment(self, event, path, line, body):
        payload = {"content": {"raw": body}, "inline": {"path": path, "to": line}}
        return str(self._post_json(self._pr(event) + "/comments", payload, inline=True)["id"])

    def post_file_comment(self, event, path, body):
        payload = {"content": {"raw": body}, "inline": {"path": path}}
        return str(self._post_json(self._pr(event) + "/comments", payload)["id"])

    def post_pr_comment(self, event, body):
        return str(self._post_json(self._pr(event) + "/comments", {"content": {"raw": body}})["id"])

    def reply_to_comment(self, event, parent_id, body):
        payload = {"content": {"raw": body}, "parent": {"id": int(parent_id)}}
        return str(self._post_json(self._pr(event) + "/comments", payload)["id"])


# --- tracker and wiki ---------------------------------------------------------


@dataclass
class InMemoryTracker:
    issues: dict[str, tuple[str, str]] = field(default_factory=dict)

    def fetch_issue(self, key: str) -> tuple[str, str]:
        try:
            return self.issues[key]
        except KeyError:
            raise FetchError(f"issue {key} not found") from None


@dataclass
class InMemoryWiki:
    pages: dict[str, tuple[str, str]] = field(default_factory=dict)
    base_url: Optional[str] = None

    def fetch_page(self, url: str) -> tuple[str, str]:
        try:
            return self.pages[url]
        except KeyError:
            raise FetchError(f"page {url} not found") from None


class JiraClient:
    def __init__(self, base_url: str, token: str) -> None:
        self._http = httpx.Client(
            base_url=base_url.rstrip("/"), headers={"Authorization": f"Bearer {token}"}, timeout=20.0
        )

    def fetch_issue(self, key: str) -> tuple[str, str]:
        try:
            resp = self._http.get(f"/rest/api/2/issue/{key}", params={"fields": "summary,description"})
        except httpx.HTTPError as exc:
            raise FetchError(str(exc)) from exc
        if resp.status_code != 200:
            raise FetchError(f"issue {key}: HTTP {resp.status_code}")
        fields = resp.json().get("fields", {})
        return fields.get("summary") or key, fields.get("description") or ""


_PAGE_ID_RE = re.compile(r"/pages/(\d+)")


class ConfluenceClient:
    def __init__(self, base_url: str, token: str) -> None:
        self.base_url = base_url.rstrip("/")
        self._http = httpx.Client(headers={"Authorization": f"Bearer {token}"}, timeout=20.0)

    def fetch_page(self, url: str) -> tuple[str, str]:
        m = _PAGE_ID_RE.search(url)
        if not m:
            raise FetchError(f"cannot find a page id in {url}")
        try:
            resp = self._http.get(
                f"{self.base_url}/rest/api/content/{m.group(1)}", params={"expand": "body.storage"}
            )
        except httpx.HTTPError as exc:
            raise FetchError(str(exc)) from exc
        if resp.status_code != 200:
            raise FetchError(f"page {url}: HTTP {resp.status_code}")
        data = resp.json()
        return data.get("title", url), data.get("body", {}).get("storage", {}).get("value", "")
