from __future__ import annotations

import random
import time

import pytest

from conftest import ORDERS_CHANGED, ORDERS_ORIGINAL, make_event
from ctxreview.agents import (
    XML_SCHEMA,
    NoAgentResultsError,
    XmlSchemaError,
    parse_agent_xml,
    run_agent,
    run_all_agents,
)
from ctxreview.chunker import chunk_source
from ctxreview.context import build_optimized_context
from ctxreview.integrations import parse_unified_diff
from ctxreview.integrations.clients import make_unified_diff
from ctxreview.llm import AuthFailure, Gateway, ScriptedMockProvider
from ctxreview.models import AgentKind, ReviewPass

# the review output schema, element for element
SKELETON = """<review>
  <comments>
    <comment>
      <description></description>
      <corrective_code></corrective_code>
      <file_path></file_path>
      <line_number></line_number>
      <confidence_score></confidence_score>
      <bucket></bucket>
    </comment>
  </comments>
</review>"""


def fill(skeleton: str, **values: str) -> str:
    for name, value in values.items():
        skeleton = skeleton.replace(f"<{name}></{name}>", f"<{name}>{value}</{name}>", 1)
    return skeleton


def comment_xml(desc="D", path="orders.py", line="10", conf="0.9", bucket="error", code=None) -> str:
    parts = [f"<description>{desc}</description>"]
    if code is not None:
        parts.append(f"<corrective_code>{code}</corrective_code>")
    parts += [
        f"<file_path>{path}</file_path>",
        f"<line_number>{line}</line_number>",
        f"<confidence_score>{conf}</confidence_score>",
        f"<bucket>{bucket}</bucket>",
    ]
    return "<comment>" + "".join(parts) + "</comment>"


def review_xml(*comments: str) -> str:
    return "<review><comments>" + "".join(comments) + "</comments></review>"


# --- parsing --------------------------------------------------------------------


def test_schema_constant_is_the_skeleton():
    assert XML_SCHEMA == SKELETON


def test_populated_skeleton_parses():
    text = fill(SKELETON, description="D", file_path="a.py", line_number="3", confidence_score="0.9", bucket="error")
    [c] = parse_agent_xml(text, AgentKind.ERROR)
    assert (c.description, c.file_path, c.line_number, c.confidence_score, c.bucket) == ("D", "a.py", 3, 0.9, "error")
    assert c.corrective_code is None and c.agent is AgentKind.ERROR


def test_empty_review_and_surrounding_prose():
    assert parse_agent_xml("<review><comments></comments></review>", AgentKind.ERROR) == []
    text = "Sure! Here it is:\n```xml\n" + review_xml(comment_xml(desc="  spaced  ")) + "\n```\nThanks."
    [c] = parse_agent_xml(text, AgentKind.SECURITY)
    assert c.description == "spaced"


def test_entities_and_cdata():
    text = review_xml(comment_xml(desc="a &lt; b", code="<![CDATA[if a < b:\n    pass]]>"))
    [c] = parse_agent_xml(text, AgentKind.ERROR)
    assert c.description == "a < b" and c.corrective_code == "if a < b:\n    pass"


def test_one_comment_missing_line_number():
    bad = comment_xml().replace("<line_number>10</line_number>", "")
    out = parse_agent_xml(review_xml(comment_xml(), bad), AgentKind.ERROR)
    assert len(out) == 1 and [w.code for w in out.warnings] == ["missing-field"]


MALFORMED = [
    ("", XmlSchemaError),
    ("No issues found in this diff.", XmlSchemaError),
    ("<comments>" + comment_xml() + "</comments>", XmlSchemaError),
    ("<review><comments>" + comment_xml(), XmlSchemaError),
    (review_xml(comment_xml().replace("<line_number>10</line_number>", "")), "missing-field"),
    (review_xml(comment_xml().replace("<description>D</description>", "")), "missing-field"),
    (review_xml(comment_xml().replace("<bucket>error</bucket>", "")), "missing-field"),
    (review_xml(comment_xml(path="   ")), "missing-field"),
    (review_xml(comment_xml(line="abc")), "bad-line-number"),
    (review_xml(comment_xml(line="0")), "bad-line-number"),
    (review_xml(comment_xml(line="-3")), "bad-line-number"),
    (review_xml(comment_xml(line="3.5")), "bad-line-number"),
    (review_xml(comment_xml(conf="high")), "bad-confidence"),
    (review_xml(comment_xml(conf="nan")), "bad-confidence"),
    (review_xml(comment_xml(conf="1.7")), "confidence-clamped"),
    (review_xml(comment_xml(conf="-0.2")), "confidence-clamped"),
    (review_xml(comment_xml(desc="x</description><description>y")), "duplicate-field"),
    ("<review><comments>" + comment_xml().replace("</comment>", "") + "</comments></review>", "unterminated-comment"),
    ("<review>" + comment_xml() + "</review>", "missing-comments-wrapper"),
    (review_xml(comment_xml()) + review_xml(comment_xml(desc="second")), "multiple-reviews"),
]


@pytest.mark.parametrize("text,expected", MALFORMED, ids=[f"variant{i:02d}" for i in range(len(MALFORMED))])
def test_malformed_variants(text, expected):
    if expected is XmlSchemaError:
        with pytest.raises(XmlSchemaError):
            parse_agent_xml(text, AgentKind.ERROR)
        return
    out = parse_agent_xml(text, AgentKind.ERROR)
    assert expected in [w.code for w in out.warnings]
    for c in out:
        assert 0.0 <= c.confidence_score <= 1.0 and c.line_number > 0


def test_malformed_corpus_size():
    assert len(MALFORMED) == 20


def test_clamped_values():
    [hi] = parse_agent_xml(review_xml(comment_xml(conf="1.7")), AgentKind.ERROR)
    [lo] = parse_agent_xml(review_xml(comment_xml(conf="-0.2")), AgentKind.ERROR)
    assert (hi.confidence_score, lo.confidence_score) == (1.0, 0.0)


# --- running agents -------------------------------------------------------------


@pytest.fixture
def ctx():
    diff = parse_unified_diff(make_unified_diff({"orders.py": ORDERS_ORIGINAL}, {"orders.py": ORDERS_CHANGED}))
    return build_optimized_context(make_event(), diff, [], chunk_source(ORDERS_ORIGINAL, "orders.py", "shop"))


def agent_of(system_prompt: str) -> AgentKind:
    from ctxreview.agents import system_prompt as sp

    return next(a for a in AgentKind if sp(a) == system_prompt)


def scripted(reflection=None, single=None, delay=False):
    """A fallback answering by role: free text for the first pass, XML for the rest."""

    def answer(req):
        agent = agent_of(req.system_prompt)
        if delay:
            time.sleep(random.random() / 50)
        if not req.structured_mode:
            return (single or (lambda a: f"FIRST PASS NOTES for {a.value}: line 10 lacks a check."))(agent)
        return (reflection or (lambda a, req: review_xml(comment_xml(desc=f"reflected {a.value}"))))(agent, req)

    return ScriptedMockProvider({}, fallback=answer)


def test_reflection_protocol(ctx):
    mock = scripted()
    result = run_agent(AgentKind.ERROR, ctx, Gateway(mock))
    assert len(mock.requests) == 2
    first, second = mock.requests
    assert [first.structured_mode, second.structured_mode] == [False, True]
    assert result.single_pass_text in second.user_prompt
    assert "FIRST PASS NOTES" not in first.user_prompt
    assert [c.description for c in result.comments] == ["reflected error"]
    assert all(c.agent is AgentKind.ERROR for c in result.comments)


def test_reask_once_then_parse(ctx):
    calls = []

    def reflection(agent, req):
        calls.append(req)
        return "not xml at all" if len(calls) == 1 else review_xml(comment_xml(), comment_xml(line="11"))

    mock = scripted(reflection)
    result = run_agent(AgentKind.ERROR, ctx, Gateway(mock))
    assert result.reasks == 1 and len(mock.requests) == 3
    assert "not xml at all" in mock.requests[2].user_prompt
    assert len(result.comments) == 2 and not result.parse_failed


def test_unparseable_after_reask_yields_nothing(ctx):
    mock = scripted(lambda a, r: "still prose")
    result = run_agent(AgentKind.ERROR, ctx, Gateway(mock))
    assert result.parse_failed and result.comments == [] and not result.failed
    assert len(mock.requests) == 3 and any("unparseable" in w for w in result.warnings)


def test_ledger_rows_per_agent_and_pass(ctx):
    gw = Gateway(scripted())
    run_all_agents(ctx, list(AgentKind), gw)
    rows = gw.ledger.agent_rows()
    assert len(rows) == 12 and all(r.calls == 1 for r in rows)


def test_canonical_order_under_shuffled_completion(ctx):
    agents = list(AgentKind)
    random.shuffle(agents)
    for _ in range(3):
        results = run_all_agents(ctx, agents, Gateway(scripted(delay=True)))
        assert [r.agent for r in results] == sorted(AgentKind, key=lambda a: a.rank)


def test_single_enabled_agent(ctx):
    results = run_all_agents(ctx, [AgentKind.ERROR], Gateway(scripted()))
    assert [r.agent for r in results] == [AgentKind.ERROR]


def test_one_failing_agent_does_not_cancel_others(ctx):
    base = scripted()

    class Failing:
        name = "mock"
        context_limit = 200_000

        def complete(self, req):
            if agent_of(req.system_prompt) is AgentKind.PERFORMANCE_OPTIMIZATION:
                raise AuthFailure("denied")
            return base.complete(req)

    results = run_all_agents(ctx, list(AgentKind), Gateway(Failing()))
    failed = [r for r in results if r.failed]
    assert [r.agent for r in failed] == [AgentKind.PERFORMANCE_OPTIMIZATION]
    assert sum(1 for r in results if r.comments) == 5


def test_all_agents_failing(ctx):
    class Down:
        name = "mock"
        context_limit = 200_000

        def complete(self, req):
            raise AuthFailure("denied")

    with pytest.raises(NoAgentResultsError, match="no agent results"):
        run_all_agents(ctx, list(AgentKind), Gateway(Down()))


def test_model_cannot_claim_another_identity(ctx):
    xml = review_xml(comment_xml().replace("</bucket>", "</bucket><agent>security</agent>"))
    result = run_agent(AgentKind.ERROR, ctx, Gateway(scripted(lambda a, r: xml)))
    assert [c.agent for c in result.comments] == [AgentKind.ERROR]


def test_comment_anchoring(ctx):
    xml = review_xml(comment_xml(line="10"), comment_xml(line="1"), comment_xml(path="elsewhere.py"))
    result = run_agent(AgentKind.ERROR, ctx, Gateway(scripted(lambda a, r: xml)))
    assert [(c.line_number, c.file_level) for c in result.comments] == [(10, False), (1, True)]
    assert any("does not touch" in w for w in result.warnings)


INJECTION_BEFORE = """\
def find_user(cursor, name):
    cursor.execute("SELECT * FROM users WHERE name = %s", (name,))
    return cursor.fetchone()
"""
INJECTION_AFTER = """\
def find_user(cursor, name):
    query = "SELECT * FROM users WHERE name = '" + name + "'"
    cursor.execute(query)
    return cursor.fetchone()
"""


def test_security_agent_flags_injection_line():
    diff = parse_unified_diff(make_unified_diff({"users.py": INJECTION_BEFORE}, {"users.py": INJECTION_AFTER}))
    ctx = build_optimized_context(make_event(title="Simplify lookup"), diff, [], [])
    finding = comment_xml(
        desc="User input is concatenated into SQL; use a parameterized query.",
        path="users.py",
        line="2",
        conf="0.95",
        bucket="security: injection",
        code='cursor.execute("SELECT * FROM users WHERE name = %s", (name,))',
    )

    def reflection(agent, req):
        if agent is AgentKind.SECURITY and "+ name +" in req.user_prompt:
            return review_xml(finding)
        return review_xml()

    results = run_all_agents(ctx, list(AgentKind), Gateway(scripted(reflection)))
    comments = [c for r in results for c in r.comments]
    assert len(comments) == 1
    [c] = comments
    assert c.agent is AgentKind.SECURITY and "security" in c.bucket and c.line_number == 2
    assert INJECTION_AFTER.splitlines()[c.line_number - 1].strip().startswith("query =")


def test_reflection_pass_ledger_flags(ctx):
    gw = Gateway(scripted())
    run_agent(AgentKind.SECURITY, ctx, gw)
    assert gw.ledger.output_tokens(AgentKind.SECURITY, ReviewPass.SINGLE_PASS) > 0
    assert gw.ledger.output_tokens(AgentKind.SECURITY, ReviewPass.REFLECTION) > 0
