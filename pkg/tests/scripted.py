"""A deterministic stand-in reviewer for the order-service fixture, and a recorder
that turns its answers into a digest-keyed mock script."""

from __future__ import annotations

import json
from pathlib import Path

from ctxreview.agents import system_prompt
from ctxreview.features import SUMMARY_SYSTEM
from ctxreview.llm import ModelRequest
from ctxreview.models import AgentKind


def _comment(desc, line, conf, bucket, code=None):
    code_xml = f"<corrective_code><![CDATA[{code}]]></corrective_code>" if code else ""
    return (
        f"<comment><description>{desc}</description>{code_xml}<file_path>orders.py</file_path>"
        f"<line_number>{line}</line_number><confidence_score>{conf}</confidence_score>"
        f"<bucket>{bucket}</bucket></comment>"
    )


FINDINGS = {
    AgentKind.ERROR: [
        _comment(
            "create_order lets the new ValueError escape; callers expecting an Order crash.",
            11,
            0.85,
            "Error handling",
            "try:\n    total = process_order(order)\nexcept ValueError:\n    raise OrderRejected(order)",
        )
    ],
    AgentKind.CODE_MAINTAINABILITY: [
        _comment("Raise a domain-specific exception instead of a bare ValueError.", 11, 0.65, "Maintainability")
    ],
    AgentKind.BUSINESS_LOGIC_VALIDATION: [
        _comment("A discount above 100% should be rejected where it is applied, in apply_discount.", 10, 0.8,
                 "Business requirement adherence")
    ],
    AgentKind.SECURITY: [_comment("Possible information leak in the error message.", 11, 0.4, "Security")],
}

SUMMARY_TEXT = "Rejects orders whose discounted total would be negative by raising ValueError in process_order."
MERGED_TEXT = "create_order lets a bare ValueError escape; raise a domain exception and handle it at the caller."


def answer(req: ModelRequest) -> str:
    if req.system_prompt == SUMMARY_SYSTEM:
        return SUMMARY_TEXT
    if req.system_prompt.startswith("You merge code review comments"):
        return MERGED_TEXT
    agent = next(a for a in AgentKind if system_prompt(a) == req.system_prompt)
    if not req.structured_mode:
        return f"{agent.value} notes: {len(FINDINGS.get(agent, []))} finding(s) near the new validation."
    return "<review><comments>" + "".join(FINDINGS.get(agent, [])) + "</comments></review>"


class Recorder:
    """Fallback that answers via ``answer`` and remembers digest -> text."""

    def __init__(self) -> None:
        self.script: dict[str, str] = {}

    def __call__(self, req: ModelRequest) -> str:
        text = answer(req)
        self.script[req.digest] = text
        return text

    def dump(self, path: Path) -> Path:
        path.write_text(json.dumps(self.script, indent=2, sort_keys=True))
        return path
