from __future__ import annotations

from hypothesis import given, settings
from hypothesis import strategies as st

from ctxreview.agents import DEFAULT_THRESHOLDS, AgentResult
from ctxreview.blending import (
    BlendingDimension,
    blend,
    blend_comments,
    confidence_filter,
    default_dimensions,
    fallback_summary,
    overlap_summarize,
)
from ctxreview.llm import Gateway, ProviderOutage, ScriptedMockProvider
from ctxreview.models import AgentKind, ReviewComment

S, M, E = AgentKind.SECURITY, AgentKind.CODE_MAINTAINABILITY, AgentKind.ERROR


def rc(agent=E, conf=0.9, path="a.py", line=10, desc="d", bucket="b", code=None) -> ReviewComment:
    return ReviewComment(desc, path, line, conf, bucket, agent, code)


def test_filter_basic_rules():
    kept = confidence_filter([rc(S, 0.9), rc(S, 0.6)], {S: 0.7})
    assert [c.confidence_score for c in kept] == [0.9]
    cs = [rc(S, 0.1), rc(M, 0.0)]
    assert confidence_filter(cs, {S: 0.0, M: 0.0}) == cs


def test_filter_per_agent_table():
    kept = confidence_filter([rc(S, 0.65), rc(M, 0.65)], {S: 0.7, M: 0.6})
    assert [c.agent for c in kept] == [M]


def test_filter_missing_threshold_warns_and_uses_default():
    warnings: list[str] = []
    kept = confidence_filter([rc(S, 0.65), rc(S, 0.55)], {}, default_threshold=0.6, warnings=warnings)
    assert [c.confidence_score for c in kept] == [0.65]
    assert len(warnings) == 1 and "security" in warnings[0]


def test_overlap_grouping():
    cs = [rc(S, 0.8, line=10), rc(M, 0.95, line=10), rc(E, 0.7, line=10), rc(E, 0.9, line=11)]
    out = overlap_summarize(cs)
    assert [(c.file_path, c.line_number) for c in out] == [("a.py", 10), ("a.py", 11)]


def test_overlap_max_confidence_member_leads():
    cs = [
        rc(S, 0.8, bucket="security", code="s"),
        rc(M, 0.95, bucket="maintainability", code="m"),
        rc(E, 0.7, bucket="error", code="e"),
    ]
    [merged] = overlap_summarize(cs)
    lead = max(cs, key=lambda c: c.confidence_score)
    assert merged.confidence_score == 0.95 == lead.confidence_score
    assert (merged.bucket, merged.corrective_code, merged.agent) == ("maintainability", "m", M)
    assert merged.description.startswith("3 reviewers flagged this line:")
    assert set(merged.contributors) == {S, M, E}


def test_overlap_tie_goes_to_canonical_first_agent():
    [merged] = overlap_summarize([rc(E, 0.9, bucket="error"), rc(S, 0.9, bucket="security")])
    assert merged.agent is S and merged.bucket == "security"


def test_overlap_identity_without_overlaps():
    cs = [rc(line=i) for i in range(1, 6)]
    assert overlap_summarize(cs) == cs


def test_overlap_uses_gateway_and_falls_back():
    gw = Gateway(ScriptedMockProvider({"__default__": "merged by model"}))
    [merged] = overlap_summarize([rc(S, 0.9), rc(E, 0.8)], gw)
    assert merged.description == "merged by model"

    class Down:
        name = "down"
        context_limit = 10_000

        def complete(self, req):
            raise ProviderOutage("gone")

    warnings: list[str] = []
    members = [rc(S, 0.9, desc="x"), rc(E, 0.8, desc="y")]
    [merged] = overlap_summarize(members, Gateway(Down()), warnings=warnings)
    assert merged.description == fallback_summary(members) == "2 reviewers flagged this line:\n- [security] x\n- [error] y"
    assert warnings


def test_blend_two_agents_no_overlap():
    results = [
        AgentResult(S, comments=[rc(S, 0.9, line=1), rc(S, 0.9, line=2)]),
        AgentResult(M, comments=[rc(M, 0.9, line=3), rc(M, 0.9, line=4)]),
    ]
    report = blend(results, pr_ref=("r", 1))
    assert len(report.comments) == 4 and report.pr_ref == ("r", 1)
    assert blend([AgentResult(S), AgentResult(M)]).comments == []


def test_dimension_order_respected():
    calls = []

    def tag(name):
        return lambda cs, w: calls.append(name) or cs

    dims = [BlendingDimension("late", "transform", 30, tag("late")), BlendingDimension("early", "filter", 5, tag("early"))]
    blend_comments([rc()], dims)
    assert calls == ["early", "late"]


agents = st.sampled_from(list(AgentKind))
comments = st.builds(
    rc,
    agent=agents,
    conf=st.floats(0, 1, allow_nan=False),
    path=st.sampled_from(["a.py", "b.py"]),
    line=st.integers(1, 6),
    desc=st.text("abc", min_size=1, max_size=3),
    bucket=st.sampled_from(["x", "y"]),
)


def oracle_filter(cs, thresholds):
    return [c for c in cs if c.confidence_score >= thresholds[c.agent]]


def oracle_overlap(cs):
    keys = []
    groups = {}
    for c in cs:
        k = (c.file_path, c.line_number)
        if k not in groups:
            keys.append(k)
            groups[k] = []
        groups[k].append(c)
    out = []
    for k in keys:
        g = groups[k]
        best = g[0]
        for c in g[1:]:
            if c.confidence_score > best.confidence_score or (
                c.confidence_score == best.confidence_score and c.agent.rank < best.agent.rank
            ):
                best = c
        out.append((k, best.confidence_score, best.bucket, best.agent, len(g)))
    return out


@settings(max_examples=200, deadline=None)
@given(st.lists(comments, max_size=50))
def test_blend_equals_sequential_oracle(cs):
    report = blend_comments(cs, default_dimensions())
    filtered = oracle_filter(cs, DEFAULT_THRESHOLDS)
    expected = oracle_overlap(filtered)
    got = [(c.location, c.confidence_score, c.bucket, c.agent) for c in report.comments]
    assert got == [e[:4] for e in expected]
    assert report.dropped_count_by_dimension["confidence-filter"] == len(cs) - len(filtered)
    assert report.dropped_count_by_dimension["overlap-summarize"] == len(filtered) - len(expected)
    assert len({c.location for c in report.comments}) == len(report.comments)


@settings(max_examples=200, deadline=None)
@given(st.lists(comments, max_size=30), st.dictionaries(agents, st.floats(0, 1, allow_nan=False)), st.randoms())
def test_filter_keep_rule_and_order_independence(cs, partial, rnd):
    thresholds = {a: partial.get(a, 0.5) for a in AgentKind}
    kept = confidence_filter(cs, thresholds)
    assert kept == [c for c in cs if c.confidence_score >= thresholds[c.agent]]
    shuffled = list(cs)
    rnd.shuffle(shuffled)
    assert sorted(map(repr, confidence_filter(shuffled, thresholds))) == sorted(map(repr, kept))


@settings(max_examples=200, deadline=None)
@given(st.lists(comments, max_size=50))
def test_blend_idempotent(cs):
    once = blend_comments(cs, default_dimensions()).comments
    twice = blend_comments(once, default_dimensions()).comments
    assert twice == once


@settings(max_examples=100, deadline=None)
@given(st.lists(comments, max_size=50))
def test_accounting_and_non_expansion(cs):
    report = blend_comments(cs, default_dimensions())
    assert len(report.comments) + sum(report.dropped_count_by_dimension.values()) == len(cs)
    assert all(v >= 0 for v in report.dropped_count_by_dimension.values())
