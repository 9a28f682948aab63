"""Model-provider gateway.

Reasoning requests go out free-form (``structured_mode=False``); only the
format-conversion step asks for structured output.  Providers are pluggable:
a scripted mock for tests and thin HTTP adapters for two hosted vendors.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Union

import httpx

from ctxreview.models import AgentKind, ReviewPass
from ctxreview.retrieval import CHARS_PER_TOKEN, estimate_tokens

logger = logging.getLogger(__name__)

DEFAULT_ATTEMPTS = 3
DEFAULT_BACKOFF = 1.0
DEFAULT_CONCURRENCY = 6


class LlmError(RuntimeError):
    pass


class ContextLimitExceeded(LlmError):
    pass


class TransientProviderError(LlmError):
    """Raised by providers for failures worth retrying (timeouts, 429, 5xx)."""


class ProviderOutage(LlmError):
    pass


class AuthFailure(LlmError):
    pass


class MockMissError(LlmError):
    pass


@dataclass(frozen=True)
class ModelRequest:
    model_id: str
    system_prompt: str
    user_prompt: str
    max_output_tokens: int = 4096
    temperature: float = 0.0
    structured_mode: bool = False

    def __post_init__(self) -> None:
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def digest(self) -> str:
        return prompt_digest(self.system_prompt, self.user_prompt)


def prompt_digest(system_prompt: str, user_prompt: str) -> str:
    """Key used by mock scripts: sha256 over system and user prompt."""
    h = hashlib.sha256()
    h.update(system_prompt.encode())
    h.update(b"\x00")
    h.update(user_prompt.encode())
    return h.hexdigest()


@dataclass(frozen=True)
class ModelResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    latency: float = 0.0
    retries: int = 0


class ModelProvider(Protocol):
    name: str
    context_limit: int

    def complete(self, req: ModelRequest) -> ModelResponse: ...


class ScriptedMockProvider:
    """Answers from a prompt-digest -> text map; ``"__default__"`` catches the rest.

    Every request is appended to ``requests`` so tests can inspect the
    exact prompts and structured-mode flags that were sent.
    """

    DEFAULT_KEY = "__default__"

    def __init__(
        self,
        script: dict[str, str],
        *,
        context_limit: int = 200_000,
        name: str = "mock",
        fallback: Optional[Callable[[ModelRequest], str]] = None,
    ) -> None:
        self.script = dict(script)
        self.fallback = fallback
        self.context_limit = context_limit
        self.name = name
        self.requests: list[ModelRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Union[str, Path], **kw) -> "ScriptedMockProvider":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
            raise ValueError(f"{path}: mock script must be a JSON object of digest -> text")
        return cls(data, **kw)

    def complete(self, req: ModelRequest) -> ModelResponse:
        with self._lock:
            self.requests.append(req)
        text = self.script.get(req.digest)
        if text is None:
            text = self.script.get(self.DEFAULT_KEY)
        if text is None and self.fallback is not None:
            text = self.fallback(req)
        if text is None:
            raise MockMissError(f"no scripted response for prompt digest {req.digest}")
        return ModelResponse(
            text=text,
            input_tokens=estimate_tokens(req.system_prompt + req.user_prompt),
            output_tokens=estimate_tokens(text),
        )


def _http_error(resp: httpx.Response) -> LlmError:
    if resp.status_code in (401, 403):
        return AuthFailure(f"provider rejected credentials ({resp.status_code})")
    if resp.status_code == 429 or resp.status_code >= 500:
        return TransientProviderError(f"provider returned {resp.status_code}")
    return LlmError(f"provider returned {resp.status_code}: {resp.text[:200]}")


class OpenAIProvider:
    name = "openai"

    def __init__(self, api_key: str, *, base_url: str = "https://api.openai.com/v1",
                 context_limit: int = 128_000, timeout: float = 120.0,
                 transport: Optional[httpx.BaseTransport] = None) -> None:
        self.context_limit = context_limit
        self._http = httpx.Client(
            base_url=base_url, headers={"Authorization": f"Bearer {api_key}"}, timeout=timeout, transport=transport
        )

    def complete(self, req: ModelRequest) -> ModelResponse:
        payload = {
            "model": req.model_id,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "max_tokens": req.max_output_tokens,
            "temperature": req.temperature,
        }
        start = time.monotonic()
        try:
            resp = self._http.post("/chat/completions", json=payload)
        except httpx.TransportError as exc:
            raise TransientProviderError(str(exc)) from exc
        if resp.status_code != 200:
            raise _http_error(resp)
        data = resp.json()
        usage = data.get("usage", {})
        return ModelResponse(
            text=data["choices"][0]["message"]["content"] or "",
            input_tokens=usage.get("prompt_tokens", 0),
            output_tokens=usage.get("completion_tokens", 0),
            latency=time.monotonic() - start,
        )


class AnthropicProvider:
    name = "anthropic"

    def __init__(self, api_key: str, *, base_url: str = "https://api.anthropic.com/v1",
                 context_limit: int = 200_000, timeout: float = 120.0,
                 transport: Optional[httpx.BaseTransport] = None) -> None:
        self.context_limit = context_limit
        self._http = httpx.Client(
            base_url=base_url,
            headers={"x-api-key": api_key, "anthropic-version": "2023-06-01"},
            timeout=timeout,
            transport=transport,
        )

    def complete(self, req: ModelRequest) -> ModelResponse:
        payload = {
            "model": req.model_id,
            "system": req.system_prompt,
            "messages": [{"role": "user", "content": req.user_prompt}],
            "max_tokens": req.max_output_tokens,
            "temperature": req.temperature,
        }
        start = time.monotonic()
        try:
            resp = self._http.post("/messages", json=payload)
        except httpx.TransportError as exc:
            raise TransientProviderError(str(exc)) from exc
        if resp.status_code != 200:
            raise _http_error(resp)
        data = resp.json()
        text = "".join(block.get("text", "") for block in data.get("content", []))
        usage = data.get("usage", {})
        return ModelResponse(
            text=text,
            input_tokens=usage.get("input_tokens", 0),
            output_tokens=usage.get("output_tokens", 0),
            latency=time.monotonic() - start,
        )


@dataclass
class UsageLedgerEntry:
    consumer: str  # agent value, or a feature name such as "summary"
    review_pass: str
    calls: int = 0
    input_tokens: int = 0
    output_tokens: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class UsageLedger:
    """Per-consumer, per-pass token totals; only ever grows."""

    def __init__(self) -> None:
        self._rows: dict[tuple[str, str], UsageLedgerEntry] = {}
        self._lock = threading.Lock()

    def record_usage(
        self, resp: ModelResponse, agent: Union[AgentKind, str], review_pass: Union[ReviewPass, str]
    ) -> UsageLedgerEntry:
        key = (getattr(agent, "value", agent), getattr(review_pass, "value", review_pass))
        with self._lock:
            row = self._rows.setdefault(key, UsageLedgerEntry(*key))
            row.calls += 1
            row.input_tokens += resp.input_tokens
            row.output_tokens += resp.output_tokens
            return UsageLedgerEntry(row.consumer, row.review_pass, row.calls, row.input_tokens, row.output_tokens)

    def output_tokens(self, agent: Union[AgentKind, str], review_pass: Union[ReviewPass, str]) -> int:
        key = (getattr(agent, "value", agent), getattr(review_pass, "value", review_pass))
        with self._lock:
            row = self._rows.get(key)
            return row.output_tokens if row else 0

    def rows(self) -> list[UsageLedgerEntry]:
        with self._lock:
            return [UsageLedgerEntry(**r.__dict__) for _, r in sorted(self._rows.items())]

    def agent_rows(self) -> list[UsageLedgerEntry]:
        agents = {a.value for a in AgentKind}
        return [r for r in self.rows() if r.consumer in agents]


@dataclass
class CallRecord:
    digest: str
    structured_mode: bool
    retries: int
    ok: bool


class Gateway:
    """Bounded-concurrency, retrying front door to one provider."""

    def __init__(
        self,
        provider: ModelProvider,
        *,
        model_id: str = "default",
        max_concurrency: int = DEFAULT_CONCURRENCY,
        attempts: int = DEFAULT_ATTEMPTS,
        backoff: float = DEFAULT_BACKOFF,
        max_output_tokens: int = 4096,
        temperature: float = 0.0,
        chars_per_token: float = CHARS_PER_TOKEN,
        sleep: Callable[[float], None] = time.sleep,
        ledger: Optional[UsageLedger] = None,
    ) -> None:
        if max_concurrency < 1 or attempts < 1:
            raise ValueError("max_concurrency and attempts must be >= 1")
        self.provider = provider
        self.model_id = model_id
        self.max_output_tokens = max_output_tokens
        self.temperature = temperature
        self.attempts = attempts
        self.backoff = backoff
        self.chars_per_token = chars_per_token
        self.ledger = ledger or UsageLedger()
        self.telemetry: list[CallRecord] = []
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._lock = threading.Lock()

    def fork(self) -> "Gateway":
        """Same provider and concurrency slots, fresh ledger and telemetry (one per job)."""
        clone = Gateway.__new__(Gateway)
        clone.__dict__.update(self.__dict__)
        clone.ledger = UsageLedger()
        clone.telemetry = []
        clone._lock = threading.Lock()
        return clone

    def request(self, system_prompt: str, user_prompt: str, *, structured_mode: bool = False) -> ModelRequest:
        return ModelRequest(
            model_id=self.model_id,
            system_prompt=system_prompt,
            user_prompt=user_prompt,
            max_output_tokens=self.max_output_tokens,
            temperature=self.temperature,
            structured_mode=structured_mode,
        )

    def complete(
        self,
        req: ModelRequest,
        *,
        agent: Union[AgentKind, str, None] = None,
        review_pass: Union[ReviewPass, str] = ReviewPass.SINGLE_PASS,
    ) -> ModelResponse:
        prompt_tokens = estimate_tokens(req.system_prompt + req.user_prompt, self.chars_per_token)
        if prompt_tokens + req.max_output_tokens > self.provider.context_limit:
            raise ContextLimitExceeded(
                f"prompt of ~{prompt_tokens} tokens plus {req.max_output_tokens} output tokens "
                f"exceeds the {self.provider.context_limit}-token context limit"
            )
        retries = 0
        with self._slots:
            while True:
                try:
                    resp = self.provider.complete(req)
                    break
                except TransientProviderError as exc:
                    if retries + 1 >= self.attempts:
                        self._log(req, retries, ok=False)
                        raise ProviderOutage(f"provider unavailable after {self.attempts} attempts: {exc}") from exc
                    delay = self.backoff * 2**retries
                    retries += 1
                    logger.info("transient provider failure (%s); retry %d in %.1fs", exc, retries, delay)
                    self._sleep(delay)
                except LlmError:
                    self._log(req, retries, ok=False)
                    raise
        self._log(req, retries, ok=True)
        resp = ModelResponse(resp.text, resp.input_tokens, resp.output_tokens, resp.latency, retries)
        if agent is not None:
            self.ledger.record_usage(resp, agent, review_pass)
        return resp

    def _log(self, req: ModelRequest, retries: int, ok: bool) -> None:
        with self._lock:
            self.telemetry.append(CallRecord(req.digest, req.structured_mode, retries, ok))


def record_usage(
    resp: ModelResponse, agent: Union[AgentKind, str], review_pass: Union[ReviewPass, str], ledger: UsageLedger
) -> UsageLedgerEntry:
    return ledger.record_usage(resp, agent, review_pass)
