"""Review-time metrics and A/B experiment mechanics.

Pipeline for a report: trim size outliers, drop unbalanced repositories,
then compute per-set and per-size-bucket statistics.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import statistics
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from ctxreview.features import size_class
from ctxreview.models import SizeClass

CONTROL_1 = "control-1"
CONTROL_2 = "control-2"
TEST = "test"
SET_LABELS = (CONTROL_1, CONTROL_2, TEST)

TRIM_BOTTOM = 0.10
TRIM_TOP = 0.75
MIN_PER_SET = 10


@dataclass(frozen=True)
class PrRecord:
    repo_id: str
    pr_number: int
    changed_loc: int
    review_time_hours: float
    set_label: str

    def __post_init__(self) -> None:
        if self.changed_loc < 1:
            raise ValueError(f"{self.repo_id}#{self.pr_number}: changed LOC must be >= 1")
        if not math.isfinite(self.review_time_hours) or self.review_time_hours < 0:
            raise ValueError(f"{self.repo_id}#{self.pr_number}: review time must be finite and >= 0")
        if self.set_label not in SET_LABELS:
            raise ValueError(f"unknown set label {self.set_label!r}")


@dataclass(frozen=True)
class SetStats:
    n: int
    avg_loc: float
    avg_review_hours: float
    avg_review_hours_per_loc: float
    median_review_hours: float


def assign_set(repo_id: str, pr_number: int) -> str:
    """Deterministic three-way split: sha256(repo, pr) mod 3."""
    digest = hashlib.sha256(f"{repo_id}\x00{pr_number}".encode()).digest()
    return SET_LABELS[int.from_bytes(digest[:8], "big") % 3]


def _require(records: Sequence) -> None:
    if not records:
        raise ValueError("at least one record is required")


def _hours(r) -> float:
    return r.review_time_hours if isinstance(r, PrRecord) else float(r)


def avg_review_time(records: Sequence[Union[PrRecord, float]]) -> float:
    _require(records)
    return math.fsum(_hours(r) for r in records) / len(records)


def avg_review_time_per_loc(records: Sequence[PrRecord]) -> float:
    """Mean of per-PR time/LOC ratios (not total time over total LOC)."""
    _require(records)
    for r in records:
        if r.changed_loc <= 0:
            raise ValueError(f"{r.repo_id}#{r.pr_number} has zero LOC")
    return math.fsum(r.review_time_hours / r.changed_loc for r in records) / len(records)


def median_review_time(records: Sequence[Union[PrRecord, float]]) -> float:
    _require(records)
    x = sorted(_hours(r) for r in records)
    n = len(x)
    if n % 2:
        return x[(n + 1) // 2 - 1]
    return (x[n // 2 - 1] + x[n // 2]) / 2


def delta_pct(test: float, control: float) -> float:
    """Relative change of the test value against a control value, in percent."""
    if control == 0:
        raise ZeroDivisionError("control value is zero")
    return (test - control) / control * 100


def trim_outliers(
    records: Sequence[PrRecord], bottom: float = TRIM_BOTTOM, top: float = TRIM_TOP
) -> list[PrRecord]:
    """Drop the smallest and largest PRs by LOC rank; survivors keep input order.

    Records are ranked 1..n by changed LOC (stable on ties).  Rank r survives
    iff floor(bottom * n) < r <= ceil(top * n).
    """
    n = len(records)
    if n == 0:
        return []
    order = sorted(range(n), key=lambda i: records[i].changed_loc)
    lo = math.floor(bottom * n + 1e-9)
    hi = math.ceil(top * n - 1e-9)
    keep = {i for rank, i in enumerate(order, start=1) if lo < rank <= hi}
    return [r for i, r in enumerate(records) if i in keep]


def set_counts(records: Iterable[PrRecord]) -> tuple[int, int, int]:
    c = Counter(r.set_label for r in records)
    return tuple(c.get(label, 0) for label in SET_LABELS)  # type: ignore[return-value]


def is_balanced(counts: Sequence[int], min_per_set: int = MIN_PER_SET) -> bool:
    return min(counts) >= min_per_set or len(set(counts)) == 1


def balance_filter(
    records_by_repo: Mapping[str, Sequence[PrRecord]], min_per_set: int = MIN_PER_SET
) -> list[str]:
    """Repos kept when every set has at least ``min_per_set`` PRs or all sets are equal."""
    return [repo for repo, recs in records_by_repo.items() if is_balanced(set_counts(recs), min_per_set)]


def set_stats(records: Sequence[PrRecord]) -> SetStats:
    _require(records)
    return SetStats(
        n=len(records),
        avg_loc=math.fsum(r.changed_loc for r in records) / len(records),
        avg_review_hours=avg_review_time(records),
        avg_review_hours_per_loc=avg_review_time_per_loc(records),
        median_review_hours=median_review_time(records),
    )


def bucket_report(records: Sequence[PrRecord]) -> dict[SizeClass, dict[str, SetStats]]:
    """SetStats per (size class, set label); empty buckets are omitted."""
    grouped: dict[SizeClass, dict[str, list[PrRecord]]] = defaultdict(lambda: defaultdict(list))
    for r in records:
        grouped[size_class(r.changed_loc)][r.set_label].append(r)
    out: dict[SizeClass, dict[str, SetStats]] = {}
    for cls in SizeClass:
        if cls in grouped:
            out[cls] = {label: set_stats(recs) for label, recs in grouped[cls].items() if recs}
    return out


def correlation(records: Sequence[PrRecord]) -> Optional[float]:
    """Pearson correlation between LOC and review time; None when undefined."""
    if len(records) < 2:
        return None
    try:
        return statistics.correlation([float(r.changed_loc) for r in records], [r.review_time_hours for r in records])
    except statistics.StatisticsError:
        return None


# --- ingestion and reporting ------------------------------------------------------

FIELDS = ("repo_id", "pr_number", "changed_loc", "review_time_hours", "set_label", "ready_at", "approved_at")


def _parse_time(value: str) -> datetime:
    return datetime.fromisoformat(value.strip().replace("Z", "+00:00"))


def parse_records(text: str) -> list[PrRecord]:
    """Read delimiter-separated records (comma or tab, optional header row).

    Columns: repo_id, pr_number, changed_loc, review_time_hours, set_label,
    ready_at, approved_at.  An empty review_time_hours is derived from the
    two ISO timestamps.  An empty set_label is filled by ``assign_set``.
    """
    sample = text[:4096]
    delimiter = "\t" if sample.count("\t") > sample.count(",") else ","
    out = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text), delimiter=delimiter), start=1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        if lineno == 1 and row[0].strip() == "repo_id":
            continue
        row = [c.strip() for c in row] + [""] * (len(FIELDS) - len(row))
        repo, pr, loc, hours, label, ready, approved = row[: len(FIELDS)]
        try:
            if hours:
                review = float(hours)
            elif ready and approved:
                review = (_parse_time(approved) - _parse_time(ready)).total_seconds() / 3600
            else:
                raise ValueError("needs review_time_hours or both timestamps")
            out.append(PrRecord(repo, int(pr), int(loc), review, label or assign_set(repo, int(pr))))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return out


@dataclass
class ExperimentReport:
    input_records: int
    trimmed_records: int
    kept_repos: list[str]
    dropped_repos: list[str]
    sets: dict[str, SetStats]
    deltas: dict[str, dict[str, Optional[float]]]
    buckets: dict[str, dict[str, SetStats]]
    bucket_deltas: dict[str, dict[str, Optional[float]]]
    correlations: dict[str, Optional[float]]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _safe_delta(test: Optional[float], control: Optional[float]) -> Optional[float]:
    if test is None or control is None or control == 0:
        return None
    return delta_pct(test, control)


METRICS = ("avg_review_hours", "avg_review_hours_per_loc", "median_review_hours")


def build_report(records: Sequence[PrRecord]) -> ExperimentReport:
    """Trim, then drop unbalanced repos, then compute Table-2/Table-3 style stats."""
    trimmed = trim_outliers(records)
    by_repo: dict[str, list[PrRecord]] = defaultdict(list)
    for r in trimmed:
        by_repo[r.repo_id].append(r)
    kept = balance_filter(by_repo)
    dropped = sorted(set(by_repo) - set(kept))
    final = [r for r in trimmed if r.repo_id in set(kept)]
    per_set = {label: [r for r in final if r.set_label == label] for label in SET_LABELS}
    sets = {label: set_stats(recs) for label, recs in per_set.items() if recs}
    deltas = {}
    for control in (CONTROL_1, CONTROL_2):
        deltas[f"test-vs-{control}"] = {
            m: _safe_delta(
                getattr(sets.get(TEST), m, None), getattr(sets.get(control), m, None)
            )
            for m in METRICS
        }
    buckets_raw = bucket_report(final)
    buckets = {cls.value: stats for cls, stats in buckets_raw.items()}
    bucket_deltas = {}
    for cls, stats in buckets.items():
        t = stats.get(TEST)
        bucket_deltas[cls] = {
            f"test-vs-{c}": _safe_delta(
                t.avg_review_hours_per_loc if t else None,
                stats[c].avg_review_hours_per_loc if c in stats else None,
            )
            for c in (CONTROL_1, CONTROL_2)
        }
    return ExperimentReport(
        input_records=len(records),
        trimmed_records=len(trimmed),
        kept_repos=sorted(kept),
        dropped_repos=dropped,
        sets=sets,
        deltas=deltas,
        buckets=buckets,
        bucket_deltas=bucket_deltas,
        correlations={label: correlation(recs) for label, recs in per_set.items()},
    )


def _fmt(v: Optional[float], digits: int = 2) -> str:
    return "-" if v is None else f"{v:.{digits}f}"


def render_text(report: ExperimentReport) -> str:
    lines = [
        f"records: {report.input_records} in, {report.trimmed_records} after size trimming; "
        f"repos kept {len(report.kept_repos)}, dropped {len(report.dropped_repos)}",
        "",
    ]
    head = f"{'Set':<22}{'PRs':>6}{'Avg LOC':>10}{'Avg hrs':>10}{'Hrs/LOC':>10}{'Median hrs':>12}"
    lines.append(head)
    for label in SET_LABELS:
        s = report.sets.get(label)
        if s is None:
            continue
        lines.append(
            f"{label:<22}{s.n:>6}{s.avg_loc:>10.0f}{s.avg_review_hours:>10.2f}"
            f"{s.avg_review_hours_per_loc:>10.2f}{s.median_review_hours:>12.2f}"
        )
    for name, d in report.deltas.items():
        lines.append(
            f"{name + ' (%)':<22}{'-':>6}{'-':>10}{_fmt(d['avg_review_hours']):>10}"
            f"{_fmt(d['avg_review_hours_per_loc']):>10}{_fmt(d['median_review_hours']):>12}"
        )
    lines += ["", f"{'Size (hrs/LOC)':<16}{'CS1':>8}{'CS2':>8}{'TS':>8}{'TS vs CS1 %':>13}{'TS vs CS2 %':>13}{'PRs':>6}"]
    for cls, stats in report.buckets.items():
        vals = [stats[l].avg_review_hours_per_loc if l in stats else None for l in SET_LABELS]
        d = report.bucket_deltas[cls]
        lines.append(
            f"{cls:<16}{_fmt(vals[0]):>8}{_fmt(vals[1]):>8}{_fmt(vals[2]):>8}"
            f"{_fmt(d['test-vs-control-1']):>13}{_fmt(d['test-vs-control-2']):>13}"
            f"{sum(s.n for s in stats.values()):>6}"
        )
    lines += ["", "LOC vs review-time correlation: " + ", ".join(
        f"{label} {_fmt(c, 3)}" for label, c in report.correlations.items()
    )]
    return "\n".join(lines)


def load_records(path: Union[str, Path]) -> list[PrRecord]:
    return parse_records(Path(path).read_text(encoding="utf-8"))
