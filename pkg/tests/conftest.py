from __future__ import annotations

import subprocess
from datetime import datetime, timezone
from pathlib import Path

import pytest

from ctxreview.models import EventKind, ProviderId, PullRequestEvent

ORDERS_ORIGINAL = """\
def calculate_total(items):
    return sum(item.price for item in items)

def apply_discount(total, discount):
    return total * (1 - discount)

def process_order(order):
    total = calculate_total(order.items)
    discounted_total = apply_discount(total, order.discount)
    return discounted_total

class OrderService:
    # Service handling order creation
    def create_order(self, order_data):
        order = Order(order_data)
        total = process_order(order)
        order.total = total
        return order
"""

# the change under review: validate the discounted total
ORDERS_CHANGED = ORDERS_ORIGINAL.replace(
    "    discounted_total = apply_discount(total, order.discount)\n",
    "    discounted_total = apply_discount(total, order.discount)\n"
    "    if discounted_total < 0:\n"
    '        raise ValueError("Discounted total cannot be negative")\n',
)

UNRELATED = """\
def parse_config(path):
    with open(path) as fh:
        return fh.read()

def render_banner(title):
    return "*" * len(title) + "\\n" + title
"""


def git(cwd: Path, *args: str) -> str:
    return subprocess.run(
        ["git", *args], cwd=cwd, check=True, capture_output=True, text=True
    ).stdout


def init_repo(root: Path) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    git(root, "init", "-q", "-b", "main")
    git(root, "config", "user.email", "dev@example.com")
    git(root, "config", "user.name", "Dev")
    git(root, "config", "commit.gpgsign", "false")
    return root


def commit_files(root: Path, files: dict[str, str], message: str) -> None:
    for rel, text in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    git(root, "add", "-A")
    git(root, "commit", "-q", "-m", message)


@pytest.fixture(scope="session")
def orders_repo(tmp_path_factory) -> Path:
    """Git repo: main has the original order code, branch `feature` adds the validation."""
    root = init_repo(tmp_path_factory.mktemp("orders") / "shop")
    commit_files(root, {"orders.py": ORDERS_ORIGINAL, "util/text.py": UNRELATED}, "Initial order code")
    git(root, "checkout", "-q", "-b", "feature")
    commit_files(
        root,
        {"orders.py": ORDERS_CHANGED},
        "Reject negative discounted totals\n\nDiscounts above 100% produced negative totals.",
    )
    git(root, "checkout", "-q", "main")
    return root


def make_event(**overrides) -> PullRequestEvent:
    fields = dict(
        provider_id=ProviderId.GITHUB,
        repo_url="https://example.com/acme/shop.git",
        repo_id="acme/shop",
        pr_number=7,
        source_branch="feature",
        target_branch="main",
        title="Reject negative totals",
        description="",
        author="dev",
        event_kind=EventKind.OPENED,
        received_at=datetime(2024, 1, 1, tzinfo=timezone.utc),
    )
    fields.update(overrides)
    return PullRequestEvent(**fields)


@pytest.fixture
def event() -> PullRequestEvent:
    return make_event()


@pytest.fixture(scope="session")
def scripted_config(orders_repo, tmp_path_factory) -> Path:
    """Config file whose mock script answers every prompt of the fixture review."""
    from ctxreview.config import EngineConfig
    from ctxreview.llm import Gateway, ScriptedMockProvider
    from ctxreview.pipeline import make_services, review_local
    from scripted import Recorder

    recorder = Recorder()
    cfg = EngineConfig()
    services = make_services(cfg)
    services.gateway = Gateway(ScriptedMockProvider({}, fallback=recorder))
    review_local(orders_repo, "main", "feature", cfg, services=services)
    root = tmp_path_factory.mktemp("scripted")
    recorder.dump(root / "script.json")
    path = root / "ctxreview.yaml"
    path.write_text("gateway:\n  provider: mock\n  mock_script: script.json\n")
    return path


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter) -> None:
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
