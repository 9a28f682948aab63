"""Semantic chunking of source files along AST definition boundaries.

Python files are split at top-level definitions: each function is one chunk,
each class contributes a header chunk (decorators, signature, docstring and
class-level statements before the first method) plus one chunk per method.
Runs of other top-level statements become ``module-top-level`` chunks.
Contiguous comment lines directly above a definition belong to it.  Lines not
covered by any chunk (blank separators, detached comments) are gaps; chunks
never overlap, so chunks and gaps together tile the file exactly.
"""

from __future__ import annotations

import ast
import hashlib
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from ctxreview.chunker.workspace import WorkspaceHandle
from ctxreview.models import CodeChunk, WarningList

logger = logging.getLogger(__name__)

DEFAULT_MAX_CHUNK_LINES = 400
MAX_FILE_BYTES = 1_000_000

LANGUAGES = {
    ".py": "python",
    ".pyi": "python",
    ".js": "javascript",
    ".jsx": "javascript",
    ".ts": "typescript",
    ".tsx": "typescript",
    ".go": "go",
    ".java": "java",
    ".rb": "ruby",
    ".rs": "rust",
    ".c": "c",
    ".h": "c",
    ".cc": "cpp",
    ".cpp": "cpp",
    ".hpp": "cpp",
    ".cs": "csharp",
    ".php": "php",
    ".kt": "kotlin",
    ".swift": "swift",
    ".scala": "scala",
    ".sql": "sql",
    ".sh": "shell",
}
# languages with an AST splitter; everything else is chunked whole-file
SUPPORTED = {"python"}

_LINE_RE = re.compile(r"[^\r\n]*(?:\r\n|\r|\n)|[^\r\n]+$")


def split_lines(text: str) -> list[str]:
    """Split keeping line endings, using the same terminators as the tokenizer."""
    return _LINE_RE.findall(text)


def language_of(path: str) -> str:
    return LANGUAGES.get(Path(path).suffix.lower(), "text")


def make_chunk_id(repo_id: str, file_path: str, symbol_name: str, content: str, occurrence: int = 0) -> str:
    content_digest = hashlib.sha256(content.encode("utf-8", "surrogatepass")).hexdigest()
    h = hashlib.sha256()
    for part in (repo_id, file_path, symbol_name, content_digest):
        h.update(part.encode("utf-8", "surrogatepass"))
        h.update(b"\x00")
    if occurrence:
        h.update(str(occurrence).encode())
    return h.hexdigest()


@dataclass
class _Span:
    start: int
    end: int
    kind: str
    name: str
    scope: Optional[str] = None


def _is_comment(line: str) -> bool:
    return line.lstrip().startswith("#")


def _leading_start(lines: list[str], start: int, floor: int) -> int:
    """Extend ``start`` upward over directly adjacent comment lines, not past ``floor``."""
    while start - 1 > floor and _is_comment(lines[start - 2]):
        start -= 1
    return start


def _def_start(node: ast.stmt) -> int:
    decos = getattr(node, "decorator_list", None) or []
    return min([node.lineno] + [d.lineno for d in decos])


_DEFS = (ast.FunctionDef, ast.AsyncFunctionDef)


def _python_spans(tree: ast.Module, lines: list[str]) -> list[_Span]:
    spans: list[_Span] = []
    floor = 0  # last line owned by a previous span
    run: list[ast.stmt] = []

    def flush_run() -> None:
        nonlocal floor
        if not run:
            return
        start = _leading_start(lines, _def_start(run[0]), floor)
        spans.append(_Span(start, run[-1].end_lineno, "module-top-level", "<module>"))
        floor = run[-1].end_lineno
        run.clear()

    for node in tree.body:
        if isinstance(node, _DEFS):
            flush_run()
            start = _leading_start(lines, _def_start(node), floor)
            spans.append(_Span(start, node.end_lineno, "function", node.name))
            floor = node.end_lineno
        elif isinstance(node, ast.ClassDef):
            flush_run()
            start = _leading_start(lines, _def_start(node), floor)
            methods = [n for n in node.body if isinstance(n, _DEFS)]
            if not methods:
                spans.append(_Span(start, node.end_lineno, "class", node.name))
                floor = node.end_lineno
                continue
            header = _Span(start, start, "class", node.name)
            spans.append(header)
            # header runs up to the first method's own leading block
            first = methods[0]
            header_end = _def_start(first) - 1
            while header_end > start and _is_comment(lines[header_end - 1]):
                header_end -= 1
            while header_end > start and not lines[header_end - 1].strip():
                header_end -= 1
            header.end = max(header_end, start)
            floor = header.end
            for m in methods:
                m_start = _leading_start(lines, _def_start(m), floor)
                spans.append(_Span(m_start, m.end_lineno, "method", m.name, node.name))
                floor = m.end_lineno
            floor = max(floor, node.end_lineno)
        else:
            run.append(node)
    flush_run()
    return spans


def _split_oversize(span: _Span, max_lines: int) -> list[_Span]:
    length = span.end - span.start + 1
    if length <= max_lines:
        return [span]
    parts = []
    for i, s in enumerate(range(span.start, span.end + 1, max_lines), start=1):
        e = min(s + max_lines - 1, span.end)
        parts.append(_Span(s, e, span.kind, f"{span.name}#part{i}", span.scope))
    return parts


def chunk_source(
    text: str,
    file_path: str,
    repo_id: str,
    *,
    max_chunk_lines: int = DEFAULT_MAX_CHUNK_LINES,
    warnings: Optional[list[str]] = None,
) -> list[CodeChunk]:
    """Chunk one file's text.  Parse failures degrade to a whole-file chunk."""
    lines = split_lines(text)
    if not text.strip():
        return []
    language = language_of(file_path)
    spans: Optional[list[_Span]] = None
    if language == "python":
        try:
            spans = _python_spans(ast.parse(text, filename=file_path), lines)
        except (SyntaxError, ValueError, RecursionError) as exc:
            msg = f"{file_path}: parse failed ({exc.__class__.__name__}), using whole-file chunk"
            logger.warning(msg)
            if warnings is not None:
                warnings.append(msg)
    if spans is None:
        spans = [_Span(1, len(lines), "other", Path(file_path).name)]

    chunks: list[CodeChunk] = []
    seen: dict[tuple[str, str], int] = {}
    for span in spans:
        for part in _split_oversize(span, max_chunk_lines):
            content = "".join(lines[part.start - 1 : part.end])
            qualified = f"{part.scope}.{part.name}" if part.scope else part.name
            occurrence = seen.get((qualified, content), 0)
            seen[(qualified, content)] = occurrence + 1
            chunks.append(
                CodeChunk(
                    chunk_id=make_chunk_id(repo_id, file_path, qualified, content, occurrence),
                    repo_id=repo_id,
                    file_path=file_path,
                    start_line=part.start,
                    end_line=part.end,
                    symbol_kind=part.kind,
                    symbol_name=part.name,
                    content=content,
                    enclosing_scope=part.scope,
                )
            )
    return chunks


def _read_text(path: Path) -> Optional[str]:
    data = path.read_bytes()
    if len(data) > MAX_FILE_BYTES or b"\x00" in data[:8192]:
        return None
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError:
        return None


def semantic_chunk(
    workspace: WorkspaceHandle,
    language_filter: Optional[Iterable[str]] = None,
    *,
    repo_id: Optional[str] = None,
    max_chunk_lines: int = DEFAULT_MAX_CHUNK_LINES,
    workers: int = 1,
) -> WarningList:
    """Chunk every text file in the workspace, in sorted path order.

    ``language_filter`` restricts which language ids are considered (see
    ``LANGUAGES``; unknown extensions are ``"text"``).  ``None`` means all.
    """
    root = workspace.root
    repo_id = repo_id or workspace.repo_url
    allowed = set(language_filter) if language_filter is not None else None
    paths = []
    for path in workspace.files():
        rel = workspace.relpath(path)
        if allowed is not None and language_of(rel) not in allowed:
            continue
        paths.append((path, rel))

    def work(item: tuple[Path, str]) -> tuple[list[CodeChunk], list[str]]:
        path, rel = item
        text = _read_text(path)
        if text is None:
            return [], []
        local_warnings: list[str] = []
        return (
            chunk_source(text, rel, repo_id, max_chunk_lines=max_chunk_lines, warnings=local_warnings),
            local_warnings,
        )

    result = WarningList()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(work, paths))
    else:
        outputs = [work(p) for p in paths]
    for chunks, warns in outputs:
        result.extend(chunks)
        result.warnings.extend(warns)
    logger.debug("chunked %d files under %s into %d chunks", len(paths), root, len(result))
    return result
