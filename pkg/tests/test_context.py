from __future__ import annotations

import pytest

from conftest import ORDERS_CHANGED, ORDERS_ORIGINAL, make_event
from ctxreview.chunker import chunk_source
from ctxreview.context import (
    ReflectionWithoutReviewError,
    build_optimized_context,
    bundle_for_agent,
    render_chunk,
)
from ctxreview.integrations import parse_unified_diff
from ctxreview.integrations.clients import make_unified_diff
from ctxreview.models import AgentKind, KnowledgeDoc, ReviewPass

BASE = {"diff", "title", "description"}
CODE = BASE | {"context-code"}

# agent/input matrix, written out by hand
EXPECTED_SINGLE = {
    AgentKind.SECURITY: BASE,
    AgentKind.CODE_COMMUNICATION: BASE,
    AgentKind.PERFORMANCE_OPTIMIZATION: CODE,
    AgentKind.CODE_MAINTAINABILITY: CODE,
    AgentKind.ERROR: CODE,
    AgentKind.BUSINESS_LOGIC_VALIDATION: CODE | {"user-story", "confluence-pages"},
}

STORY = KnowledgeDoc("story", "SHOP-12", "Validate discounts", "Totals must never be negative.")
PAGE = KnowledgeDoc("approach", "PAGE-9", "Pricing approach", "Discounts are fractions in [0, 1].")


def full_context(docs=(STORY, PAGE)):
    diff = parse_unified_diff(make_unified_diff({"orders.py": ORDERS_ORIGINAL}, {"orders.py": ORDERS_CHANGED}))
    chunks = chunk_source(ORDERS_ORIGINAL, "orders.py", "shop")
    event = make_event(description="Discounts above 100% broke totals.")
    return build_optimized_context(event, diff, list(docs), chunks)


@pytest.mark.parametrize("agent", list(AgentKind))
@pytest.mark.parametrize("review_pass", list(ReviewPass))
def test_matrix(agent, review_pass):
    ctx = full_context()
    bundle = bundle_for_agent(ctx, agent, review_pass, "initial notes")
    expected = set(EXPECTED_SINGLE[agent])
    if review_pass is ReviewPass.REFLECTION:
        expected |= {"initial-llm-review"}
    assert {p.value for p in bundle.parts} == expected


@pytest.mark.parametrize("agent", [AgentKind.SECURITY, AgentKind.CODE_COMMUNICATION])
def test_no_context_code_for_diff_only_agents(agent):
    ctx = full_context()
    for review_pass in ReviewPass:
        bundle = bundle_for_agent(ctx, agent, review_pass, "notes")
        assert "Related code" not in bundle.text and bundle.chunks == ()
        assert "SHOP-12" not in bundle.text


def test_only_business_validation_sees_docs():
    ctx = full_context()
    for agent in AgentKind:
        text = bundle_for_agent(ctx, agent).text
        assert ("Totals must never be negative." in text) == (agent is AgentKind.BUSINESS_LOGIC_VALIDATION)
        assert ("Discounts are fractions" in text) == (agent is AgentKind.BUSINESS_LOGIC_VALIDATION)


def test_reflection_requires_initial_review():
    with pytest.raises(ReflectionWithoutReviewError):
        bundle_for_agent(full_context(), AgentKind.ERROR, ReviewPass.REFLECTION)
    with pytest.raises(ReflectionWithoutReviewError):
        bundle_for_agent(full_context(), AgentKind.ERROR, ReviewPass.REFLECTION, "")


def test_serialization_order():
    ctx = full_context()
    text = bundle_for_agent(ctx, AgentKind.BUSINESS_LOGIC_VALIDATION, ReviewPass.REFLECTION, "MY NOTES").text
    markers = [
        "## Pull request title",
        "## Pull request description",
        "## User story",
        "## Approach document",
        "## Related code",
        "## Pull request diff",
        "## Your initial review",
    ]
    positions = [text.index(m) for m in markers]
    assert positions == sorted(positions)
    assert text.rstrip().endswith("MY NOTES")


def test_empty_parts_omitted():
    ctx = full_context(docs=())
    assert ctx.story is None and ctx.approach is None
    ctx = build_optimized_context(make_event(description=""), ctx.pr_diff, [], [])
    text = bundle_for_agent(ctx, AgentKind.BUSINESS_LOGIC_VALIDATION).text
    assert "description" not in text.lower().split("## pull request diff")[0]
    assert "User story" not in text and "Related code" not in text


def test_first_doc_of_each_kind_wins_and_chunks_dedup():
    other = KnowledgeDoc("story", "SHOP-13", "Second", "ignored")
    chunks = chunk_source(ORDERS_ORIGINAL, "orders.py", "shop")
    ctx = build_optimized_context(make_event(), full_context().pr_diff, [STORY, other, PAGE], chunks + chunks[:2])
    assert ctx.story == STORY and ctx.approach == PAGE
    assert [c.chunk_id for c in ctx.relevant_chunks] == [c.chunk_id for c in chunks]


def test_chunk_header_has_path_and_span():
    chunk = chunk_source(ORDERS_ORIGINAL, "orders.py", "shop")[0]
    assert render_chunk(chunk).startswith("### orders.py:1-2 (calculate_total)\n```python\n")


def test_budget_drops_lowest_ranked_chunks_with_warning():
    ctx = full_context()
    full = bundle_for_agent(ctx, AgentKind.ERROR)
    budget = len(full.text) // 4 - 20
    trimmed = bundle_for_agent(ctx, AgentKind.ERROR, token_budget=budget)
    assert len(trimmed.text) / 4 <= budget
    assert trimmed.chunks == ctx.relevant_chunks[: len(trimmed.chunks)]
    assert len(trimmed.chunks) < len(ctx.relevant_chunks)
    assert len(trimmed.warnings) == len(ctx.relevant_chunks) - len(trimmed.chunks)
    assert "dropped context chunk" in trimmed.warnings[0]
