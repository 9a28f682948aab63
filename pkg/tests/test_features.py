from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import ORDERS_CHANGED, ORDERS_ORIGINAL, make_event
from ctxreview.chunker import chunk_source
from ctxreview.context import build_optimized_context
from ctxreview.features import (
    ChatCommand,
    EmptyChatPromptError,
    answer_chat,
    chat_prompt,
    parse_chat_command,
    render_summary_comment,
    size_class,
    summarize_pr,
)
from ctxreview.integrations import parse_unified_diff
from ctxreview.integrations.clients import make_unified_diff
from ctxreview.llm import Gateway, ProviderOutage, ScriptedMockProvider
from ctxreview.models import SizeClass

BOUNDARIES = [
    (0, "S"),
    (50, "S"),
    (51, "M"),
    (100, "M"),
    (101, "L"),
    (200, "L"),
    (201, "XL"),
    (500, "XL"),
    (501, "XXL"),
]


@pytest.mark.parametrize("loc,expected", BOUNDARIES)
def test_size_class_boundaries(loc, expected):
    assert size_class(loc).value == expected


@given(st.integers(0, 10_000))
def test_size_class_is_monotone_step(loc):
    order = ["S", "M", "L", "XL", "XXL"]
    assert order.index(size_class(loc).value) <= order.index(size_class(loc + 1).value)


def test_negative_loc_rejected():
    with pytest.raises(ValueError):
        size_class(-1)


def ctx_with_loc(n: int, description: str = ""):
    new = "".join(f"x{i} = {i}\n" for i in range(n))
    diff = parse_unified_diff(make_unified_diff({"m.py": ""}, {"m.py": new}))
    return build_optimized_context(make_event(description=description), diff, [], [])


def test_summary_uses_one_call_and_sizes():
    mock = ScriptedMockProvider({"__default__": "Adds ten constants."})
    gw = Gateway(mock)
    summary = summarize_pr(ctx_with_loc(10), gw)
    assert summary.summary_text == "Adds ten constants."
    assert (summary.changed_loc, summary.size_class, summary.estimated_review_minutes) == (10, SizeClass.S, 10)
    assert len(mock.requests) == 1 and not summary.degraded
    assert summarize_pr(ctx_with_loc(700), None).size_class is SizeClass.XXL


def test_summary_prompt_excludes_docs_and_chunks():
    mock = ScriptedMockProvider({"__default__": "ok"})
    diff = parse_unified_diff(make_unified_diff({"orders.py": ORDERS_ORIGINAL}, {"orders.py": ORDERS_CHANGED}))
    from ctxreview.models import KnowledgeDoc

    ctx = build_optimized_context(
        make_event(), diff, [KnowledgeDoc("story", "K-1", "Story", "SECRET STORY")], chunk_source(ORDERS_ORIGINAL, "orders.py", "r")
    )
    summarize_pr(ctx, Gateway(mock))
    prompt = mock.requests[0].user_prompt
    assert "SECRET STORY" not in prompt and "Related code" not in prompt and "## Pull request diff" in prompt


def test_summary_degrades_on_gateway_failure():
    class Down:
        name = "down"
        context_limit = 10_000

        def complete(self, req):
            raise ProviderOutage("gone")

    summary = summarize_pr(ctx_with_loc(51), Gateway(Down()))
    assert summary.degraded and summary.size_class is SizeClass.M
    assert summary.summary_text.startswith("1 file(s) changed, +51 -0")


def test_custom_review_minutes_and_comment_format():
    summary = summarize_pr(ctx_with_loc(3), None, review_minutes={SizeClass.S: 7})
    text = render_summary_comment(summary)
    assert text.splitlines()[:3] == ["## PR Summary", "**Size:** S (3 LOC changed)", "**Estimated review time:** 7 min"]


# --- chat -----------------------------------------------------------------------


def test_chat_trigger_variants():
    cmd = parse_chat_command("#dd - Why are parameterized queries safer?")
    assert (cmd.trigger, cmd.prompt) == ("dd", "Why are parameterized queries safer?")
    cmd = parse_chat_command("#deputydev Generate a docstring for this function.")
    assert (cmd.trigger, cmd.prompt) == ("deputydev", "Generate a docstring for this function.")
    assert parse_chat_command("thanks, LGTM") is None
    assert parse_chat_command("see #dd explain") is None
    assert parse_chat_command("#ddx explain") is None
    assert parse_chat_command("  #DD\texplain  ").prompt == "explain"


@pytest.mark.parametrize("text", ["#dd", "#dd -", "#deputydev   ", "  #dd - \n"])
def test_chat_empty_prompt(text):
    with pytest.raises(EmptyChatPromptError, match="empty chat prompt"):
        parse_chat_command(text)


@given(st.text(max_size=30))
def test_chat_prefix_anchored(prefix):
    text = prefix + " #dd explain"
    cmd = parse_chat_command(text)
    if cmd is not None:
        assert text.strip().lower().startswith(("#dd", "#deputydev"))


@pytest.fixture
def orders_ctx():
    diff = parse_unified_diff(make_unified_diff({"orders.py": ORDERS_ORIGINAL}, {"orders.py": ORDERS_CHANGED}))
    chunks = chunk_source(ORDERS_CHANGED, "orders.py", "shop")
    return build_optimized_context(make_event(), diff, [], chunks[:2]), chunks


def test_chat_echo_and_single_call(orders_ctx):
    ctx, _ = orders_ctx
    mock = ScriptedMockProvider({"__default__": "Because of escaping."})
    reply = answer_chat(ChatCommand("dd", "Why?"), ctx, Gateway(mock))
    assert reply == "Because of escaping." and len(mock.requests) == 1
    assert mock.requests[0].user_prompt.rstrip().endswith("## Question\nWhy?")


def test_anchored_chat_includes_chunk_containing_line(orders_ctx):
    ctx, chunks = orders_ctx
    line = 17  # inside OrderService.create_order in the changed file
    [expected] = [c for c in chunks if c.start_line <= line <= c.end_line and c.symbol_kind != "class"]
    prompt = chat_prompt(ChatCommand("dd", "Explain", anchor=("orders.py", line)), ctx, chunks)
    assert expected.qualified_name == "OrderService.create_order"
    assert expected.content in prompt and "## Code the question refers to (orders.py:17)" in prompt


def test_unanchored_chat_has_only_relevant_chunks(orders_ctx):
    ctx, chunks = orders_ctx
    prompt = chat_prompt(ChatCommand("dd", "Explain"), ctx, chunks)
    for c in chunks:
        assert (f"({c.qualified_name})" in prompt) == (c in ctx.relevant_chunks)


def test_chat_failure_reply(orders_ctx):
    ctx, _ = orders_ctx

    class Down:
        name = "down"
        context_limit = 10_000

        def complete(self, req):
            raise ProviderOutage("gone")

    reply = answer_chat(ChatCommand("dd", "Why?"), ctx, Gateway(Down()))
    assert reply.startswith("Sorry, I could not answer this right now (error id ")
