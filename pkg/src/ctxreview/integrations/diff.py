"""Unified diff parsing and re-serialization.

The parser keeps every header line verbatim so that ``str(parse_unified_diff(text))``
reproduces ``text`` byte for byte.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Optional

ADDED = "+"
REMOVED = "-"
CONTEXT = " "

_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@(.*)$")
_DIFF_GIT_RE = re.compile(r'^diff --git "?a/(.*?)"? "?b/(.*?)"?$')


class DiffParseError(ValueError):
    pass


@dataclass
class DiffLine:
    kind: str  # "+", "-" or " "
    text: str
    # True when followed by "\ No newline at end of file"
    no_newline: bool = False


@dataclass
class Hunk:
    old_start: int
    old_count: int
    new_start: int
    new_count: int
    lines: list[DiffLine] = field(default_factory=list)
    section: str = ""
    # header spelling, e.g. "-3 +3" vs "-3,1 +3,1"
    header: Optional[str] = None

    @property
    def added(self) -> int:
        return sum(1 for ln in self.lines if ln.kind == ADDED)

    @property
    def removed(self) -> int:
        return sum(1 for ln in self.lines if ln.kind == REMOVED)

    def check_counts(self) -> None:
        context = sum(1 for ln in self.lines if ln.kind == CONTEXT)
        if context + self.removed != self.old_count or context + self.added != self.new_count:
            raise DiffParseError(
                f"hunk @@ -{self.old_start},{self.old_count} +{self.new_start},{self.new_count} @@ "
                f"line counts do not match its body"
            )

    def new_line_numbers(self) -> Iterator[tuple[int, DiffLine]]:
        """Yield (new-file line number, line) for added and context lines."""
        lineno = self.new_start
        for ln in self.lines:
            if ln.kind == REMOVED:
                continue
            yield lineno, ln
            lineno += 1

    def render_header(self) -> str:
        if self.header is not None:
            return self.header
        return (
            f"@@ -{self.old_start},{self.old_count} +{self.new_start},{self.new_count} @@"
            f"{self.section}"
        )


@dataclass
class FileDiff:
    path: str
    old_path: Optional[str] = None
    hunks: list[Hunk] = field(default_factory=list)
    header_lines: list[str] = field(default_factory=list)

    @property
    def added(self) -> int:
        return sum(h.added for h in self.hunks)

    @property
    def removed(self) -> int:
        return sum(h.removed for h in self.hunks)

    @property
    def is_deleted(self) -> bool:
        return any(h.startswith("+++ /dev/null") for h in self.header_lines) or any(
            h.startswith("deleted file mode") for h in self.header_lines
        )

    def added_lines(self) -> set[int]:
        return {n for h in self.hunks for n, ln in h.new_line_numbers() if ln.kind == ADDED}

    def visible_lines(self) -> set[int]:
        """New-file line numbers that appear in the diff (added or context)."""
        return {n for h in self.hunks for n, _ in h.new_line_numbers()}


@dataclass
class UnifiedDiff:
    files: list[FileDiff] = field(default_factory=list)

    @property
    def changed_loc(self) -> int:
        return sum(f.added + f.removed for f in self.files)

    @property
    def is_empty(self) -> bool:
        return not self.files

    def paths(self) -> list[str]:
        return [f.path for f in self.files]

    def file(self, path: str) -> Optional[FileDiff]:
        for f in self.files:
            if f.path == path:
                return f
        return None

    def hunk_text(self) -> str:
        """Concatenated hunk bodies without +/- markers; the retrieval query text."""
        out = []
        for f in self.files:
            for h in f.hunks:
                out.extend(ln.text for ln in h.lines)
        return "\n".join(out)

    def __str__(self) -> str:
        return serialize_diff(self)


def _path_from_marker(line: str) -> Optional[str]:
    target = line[4:].split("\t", 1)[0].strip()
    if target == "/dev/null":
        return None
    if target.startswith('"') and target.endswith('"'):
        target = target[1:-1]
    if target[:2] in ("a/", "b/"):
        target = target[2:]
    return target


def parse_unified_diff(text: str) -> UnifiedDiff:
    """Parse ``git diff`` style output into files and hunks.

    Raises DiffParseError when hunk bodies disagree with their headers.
    """
    diff = UnifiedDiff()
    if not text:
        return diff
    lines = text.split("\n")
    trailing_newline = lines[-1] == ""
    if trailing_newline:
        lines.pop()
    else:
        raise DiffParseError("diff text must end with a newline")

    current: Optional[FileDiff] = None
    hunk: Optional[Hunk] = None
    remaining_old = remaining_new = 0
    for raw in lines:
        if hunk is not None and (remaining_old > 0 or remaining_new > 0):
            tag, body = raw[:1], raw[1:]
            if raw == "":
                # some tools strip the single space of blank context lines
                tag, body = CONTEXT, ""
            if tag == "\\":
                if not hunk.lines:
                    raise DiffParseError("no-newline marker before any hunk line")
                hunk.lines[-1].no_newline = True
                continue
            if tag not in (ADDED, REMOVED, CONTEXT):
                raise DiffParseError(f"unexpected line inside hunk: {raw!r}")
            hunk.lines.append(DiffLine(tag, body))
            if tag != ADDED:
                remaining_old -= 1
            if tag != REMOVED:
                remaining_new -= 1
            if remaining_old < 0 or remaining_new < 0:
                raise DiffParseError("hunk body longer than its header declares")
            continue
        if raw.startswith("\\") and hunk is not None and hunk.lines:
            hunk.lines[-1].no_newline = True
            continue
        if raw.startswith("diff --git "):
            m = _DIFF_GIT_RE.match(raw)
            path = m.group(2) if m else raw.rsplit(" b/", 1)[-1]
            old = m.group(1) if m else None
            current = FileDiff(path=path, old_path=old, header_lines=[raw])
            diff.files.append(current)
            hunk = None
            continue
        m = _HUNK_RE.match(raw)
        if m:
            if current is None:
                raise DiffParseError("hunk header before any file header")
            old_start, old_count, new_start, new_count, section = m.groups()
            hunk = Hunk(
                old_start=int(old_start),
                old_count=1 if old_count is None else int(old_count),
                new_start=int(new_start),
                new_count=1 if new_count is None else int(new_count),
                section=section,
                header=raw,
            )
            current.hunks.append(hunk)
            remaining_old, remaining_new = hunk.old_count, hunk.new_count
            continue
        if raw.startswith("--- ") and (current is None or current.hunks):
            # plain unified diff without "diff --git" lines
            current = FileDiff(path="", header_lines=[])
            diff.files.append(current)
            hunk = None
        if current is None:
            raise DiffParseError(f"unexpected line outside a file section: {raw!r}")
        if current.hunks:
            raise DiffParseError(f"unexpected line after hunk body: {raw!r}")
        current.header_lines.append(raw)
        if raw.startswith("--- "):
            old = _path_from_marker(raw)
            if old is not None:
                current.old_path = old
                current.path = current.path or old
        elif raw.startswith("+++ "):
            new = _path_from_marker(raw)
            if new is not None:
                current.path = new
    if hunk is not None and (remaining_old > 0 or remaining_new > 0):
        raise DiffParseError("diff ended inside a hunk")
    for f in diff.files:
        for h in f.hunks:
            h.check_counts()
    return diff


def serialize_diff(diff: UnifiedDiff) -> str:
    out: list[str] = []
    for f in diff.files:
        out.extend(f.header_lines)
        for h in f.hunks:
            out.append(h.render_header())
            for ln in h.lines:
                out.append(ln.kind + ln.text)
                if ln.no_newline:
                    out.append("\\ No newline at end of file")
    if not out:
        return ""
    return "\n".join(out) + "\n"
