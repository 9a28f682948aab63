from __future__ import annotations

import json
import threading
import time

import pytest
from fastapi.testclient import TestClient

from conftest import ORDERS_CHANGED, ORDERS_ORIGINAL
from ctxreview.config import EngineConfig
from ctxreview.integrations import sign_payload
from ctxreview.integrations.clients import InMemoryVcsClient
from ctxreview.llm import Gateway, ScriptedMockProvider
from ctxreview.pipeline import make_services, offline_answer
from ctxreview.service import EMPTY_PROMPT_REPLY, JobQueue, QueueFullError, create_app

PR = {
    "action": "opened",
    "pull_request": {
        "number": 7,
        "title": "Reject negative totals",
        "body": "",
        "user": {"login": "dev"},
        "head": {"ref": "feature"},
        "base": {"ref": "main"},
    },
    "repository": {"full_name": "acme/shop", "clone_url": ""},
}


def body(payload=PR, **changes) -> bytes:
    return json.dumps(dict(payload, **changes)).encode()


def comment(text: str) -> bytes:
    return body(action="created", comment={"id": 11, "body": text, "user": {"login": "eve"}})


class SlowProvider:
    """Mock answers after a delay, so queued reviews keep the workers busy."""

    name = "slow"
    context_limit = 200_000

    def __init__(self, delay: float) -> None:
        self.delay = delay
        self.inner = ScriptedMockProvider({}, fallback=offline_answer)

    def complete(self, req):
        time.sleep(self.delay)
        return self.inner.complete(req)


@pytest.fixture
def stub():
    vcs = InMemoryVcsClient()
    vcs.add_branch("acme/shop", "main", {"orders.py": ORDERS_ORIGINAL})
    vcs.add_branch("acme/shop", "feature", {"orders.py": ORDERS_CHANGED})
    return vcs


def make_client(stub, *, delay=0.0, jobs=2, queue_size=64, secret=None, chat_reply=None):
    cfg = EngineConfig()
    cfg.service.jobs = jobs
    cfg.service.queue_size = queue_size
    if secret:
        cfg.service.webhook_secrets["github"] = secret
    services = make_services(cfg)
    provider = ScriptedMockProvider({"__default__": chat_reply}) if chat_reply else SlowProvider(delay)
    services.gateway = Gateway(provider)
    app = create_app(cfg, services=services, vcs_for=lambda provider: stub)
    return TestClient(app), app.state.engine


def post(client, data: bytes, provider="github", headers=None):
    return client.post(f"/webhook/{provider}", content=data, headers=headers or {})


def test_ack_under_500ms_on_loaded_pool(stub):
    client, state = make_client(stub, delay=0.05, jobs=2)
    latencies = []
    for i in range(12):
        start = time.perf_counter()
        resp = post(client, body(pull_request=dict(PR["pull_request"], number=100 + i)))
        latencies.append(time.perf_counter() - start)
        assert resp.status_code == 202 and resp.json()["status"] == "accepted"
    assert max(latencies) < 0.5
    assert state.jobs.pending > 0  # work is still queued when the last ack returns
    state.jobs.join()
    assert len(state.runs) == 12


def test_status_codes(stub):
    client, state = make_client(stub, secret="s3cret")
    data = body()
    assert post(client, data, provider="svn").status_code == 404
    assert post(client, data).status_code == 401
    bad = post(client, data, headers={"X-Hub-Signature-256": sign_payload(data, "wrong")})
    assert bad.status_code == 401
    signed = lambda d: {"X-Hub-Signature-256": sign_payload(d, "s3cret")}  # noqa: E731
    closed = body(action="closed")
    resp = post(client, closed, headers=signed(closed))
    assert resp.status_code == 200 and resp.json()["status"] == "ignored"
    assert post(client, b"not json", headers=signed(b"not json")).status_code == 400
    ok = post(client, data, headers=signed(data))
    assert ok.status_code == 202 and isinstance(ok.json()["job"], int)
    assert client.get("/healthz").json()["status"] == "ok"
    state.jobs.join()


def test_queue_full_is_503(stub):
    client, state = make_client(stub, jobs=1, queue_size=1)
    gate = threading.Event()
    state.jobs.submit(gate.wait)  # occupies the only worker
    time.sleep(0.05)
    state.jobs.submit(lambda: None)  # fills the queue
    assert post(client, body()).status_code == 503
    gate.set()
    state.jobs.join()


def test_chat_routing(stub):
    client, state = make_client(stub, chat_reply="Parameterized queries escape input.")
    assert post(client, comment("thanks, LGTM")).json()["status"] == "ignored"
    assert post(client, comment("#dd - Why are parameterized queries safer?")).status_code == 202
    assert post(client, comment("#dd")).status_code == 202
    state.jobs.join()
    replies = [c for c in stub.comments[("acme/shop", 7)] if c.kind == "reply"]
    assert sorted(r.body for r in replies) == sorted(["Parameterized queries escape input.", EMPTY_PROMPT_REPLY])
    assert all(r.parent_id == "11" for r in replies)
    assert state.runs == []  # chat never starts a review


def test_job_queue_survives_crashing_job():
    jobs = JobQueue(1, 4)
    done = threading.Event()
    jobs.submit(lambda: 1 / 0)
    jobs.submit(done.set)
    assert done.wait(2)
    full = JobQueue(1, 1)
    gate = threading.Event()
    full.submit(gate.wait)
    time.sleep(0.05)
    full.submit(lambda: None)
    with pytest.raises(QueueFullError):
        full.submit(lambda: None)
    gate.set()

