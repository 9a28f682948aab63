"""Ephemeral checkouts that live only as long as one review job."""

from __future__ import annotations

import os
import shutil
import subprocess
import tempfile
from pathlib import Path
from typing import Iterator, Optional

DEFAULT_MIN_FREE_BYTES = 64 * 1024 * 1024


class CloneError(RuntimeError):
    pass


class DiskSpaceError(CloneError):
    pass


class WorkspaceDisposedError(RuntimeError):
    pass


class WorkspaceHandle:
    """A temporary working tree; ``dispose()`` removes it unconditionally."""

    def __init__(self, root: Path, repo_url: str, ref: str) -> None:
        self._root: Optional[Path] = root
        self.repo_url = repo_url
        self.ref = ref

    @property
    def root(self) -> Path:
        if self._root is None:
            raise WorkspaceDisposedError("workspace disposed")
        return self._root

    @property
    def disposed(self) -> bool:
        return self._root is None

    def files(self) -> Iterator[Path]:
        """Tracked-looking files under the root, sorted, ``.git`` excluded."""
        root = self.root
        for dirpath, dirnames, filenames in os.walk(root):
            dirnames[:] = sorted(d for d in dirnames if d != ".git")
            for name in sorted(filenames):
                path = Path(dirpath) / name
                if path.is_file() and not path.is_symlink():
                    yield path

    def relpath(self, path: Path) -> str:
        return path.relative_to(self.root).as_posix()

    def dispose(self) -> None:
        if self._root is not None:
            shutil.rmtree(self._root, ignore_errors=True)
            self._root = None

    def __enter__(self) -> "WorkspaceHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.dispose()

    def __del__(self) -> None:
        self.dispose()


def _git(cwd: Path, *args: str) -> None:
    proc = subprocess.run(["git", *args], cwd=cwd, capture_output=True, text=True, check=False)
    if proc.returncode != 0:
        raise CloneError(proc.stderr.strip() or f"git {args[0]} failed")


def _as_url(repo_url: str) -> str:
    if "://" not in repo_url and not repo_url.startswith("git@") and os.path.isdir(repo_url):
        return Path(repo_url).resolve().as_uri()
    return repo_url


def clone_ephemeral(
    repo_url: str,
    branch: str,
    *,
    tmp_dir: Optional[str] = None,
    min_free_bytes: int = DEFAULT_MIN_FREE_BYTES,
) -> WorkspaceHandle:
    """Shallow-fetch ``branch`` (or any commit-ish) into a fresh temp directory."""
    base = tmp_dir or tempfile.gettempdir()
    if shutil.disk_usage(base).free < min_free_bytes:
        raise DiskSpaceError(f"less than {min_free_bytes} bytes free in {base}")
    root = Path(tempfile.mkdtemp(prefix="ctxreview-", dir=base))
    try:
        _git(root, "init", "-q")
        _git(root, "fetch", "-q", "--depth", "1", _as_url(repo_url), branch)
        _git(root, "-c", "advice.detachedHead=false", "checkout", "-q", "--detach", "FETCH_HEAD")
    except BaseException as exc:
        shutil.rmtree(root, ignore_errors=True)
        if isinstance(exc, CloneError):
            raise CloneError(f"cannot clone {repo_url}@{branch}: {exc}") from None
        raise
    return WorkspaceHandle(root, repo_url, branch)
