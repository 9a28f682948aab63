"""Engine configuration: one YAML file, environment overrides for secrets.

Every setting has a default, so an empty file is a valid configuration.
Unknown keys are rejected so typos fail loudly instead of being ignored.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin, get_type_hints

import yaml

from ctxreview.agents import DEFAULT_THRESHOLDS
from ctxreview.features import DEFAULT_REVIEW_MINUTES
from ctxreview.models import AgentKind, SizeClass

ENV_PREFIX = "CTXREVIEW_"


class ConfigError(ValueError):
    pass


def _doc(text: str, **kw: Any) -> Any:
    return field(metadata={"doc": text}, **kw)


@dataclass
class AgentSettings:
    enabled: list[str] = _doc(
        "Agents to run, any of: " + ", ".join(a.value for a in AgentKind),
        default_factory=lambda: [a.value for a in AgentKind],
    )
    thresholds: dict[str, float] = _doc(
        "Minimum confidence per agent for a comment to survive blending",
        default_factory=lambda: {a.value: t for a, t in DEFAULT_THRESHOLDS.items()},
    )
    default_threshold: float = _doc("Threshold for agents missing from `thresholds`", default=0.6)
    token_budget: Optional[int] = _doc("Per-agent prompt budget in tokens; null means the model limit", default=None)


@dataclass
class RetrievalConfig:
    top_k: int = _doc("Hits kept from each of lexical and semantic search", default=25)
    min_similarity: float = _doc("Cosine floor for semantic hits", default=0.35)
    budget_tokens: int = _doc("Token budget for the merged relevant-code set", default=24000)
    chars_per_token: float = _doc("Characters per token used for estimates", default=4.0)
    embedder: str = _doc("hashing (offline, deterministic), http (OpenAI-compatible) or none", default="hashing")
    embedder_url: Optional[str] = _doc("Base URL for the http embedder", default=None)
    embedder_model: str = _doc("Model name sent to the http embedder", default="text-embedding-3-small")
    embedder_dim: int = _doc("Embedding dimension", default=512)


@dataclass
class ChunkerConfig:
    max_chunk_lines: int = _doc("Definitions longer than this are split into parts", default=400)
    ttl_minutes: int = _doc("Chunk store TTL: expected job time plus a safety margin", default=60)
    languages: Optional[list[str]] = _doc("Language ids to chunk; null means every text file", default=None)
    workers: int = _doc("Threads used to chunk files", default=4)


@dataclass
class GatewayConfig:
    provider: str = _doc("mock, openai or anthropic", default="mock")
    model_id: str = _doc("Model identifier passed to the provider", default="mock-model")
    mock_script: Optional[str] = _doc("JSON file of prompt-digest -> response for the mock provider", default=None)
    api_key: Optional[str] = _doc("Provider API key (env CTXREVIEW_API_KEY)", default=None)
    base_url: Optional[str] = _doc("Override the provider API base URL", default=None)
    context_limit: Optional[int] = _doc("Override the provider context window in tokens", default=None)
    max_concurrency: int = _doc("Concurrent model calls across all jobs", default=6)
    attempts: int = _doc("Attempts per call on transient failures", default=3)
    backoff_seconds: float = _doc("Initial retry backoff, doubled per retry", default=1.0)
    max_output_tokens: int = _doc("Output token cap per call", default=4096)
    temperature: float = _doc("Sampling temperature", default=0.0)


@dataclass
class BlendingConfig:
    order: list[str] = _doc(
        "Dimension order; each name appears once",
        default_factory=lambda: ["confidence-filter", "overlap-summarize"],
    )
    summarize_with_model: bool = _doc("Ask the model to merge same-line comments", default=True)


@dataclass
class FeatureConfig:
    summary: bool = _doc("Post a PR summary with size and review-time estimate", default=True)
    chat: bool = _doc("Answer #dd / #deputydev comments", default=True)
    review_minutes: dict[str, int] = _doc(
        "Estimated review minutes per size class",
        default_factory=lambda: {c.value: m for c, m in DEFAULT_REVIEW_MINUTES.items()},
    )


@dataclass
class VcsConfig:
    github_token: Optional[str] = _doc("env CTXREVIEW_GITHUB_TOKEN", default=None)
    gitlab_token: Optional[str] = _doc("env CTXREVIEW_GITLAB_TOKEN", default=None)
    bitbucket_token: Optional[str] = _doc("env CTXREVIEW_BITBUCKET_TOKEN", default=None)
    jira_url: Optional[str] = _doc("Issue tracker base URL", default=None)
    jira_token: Optional[str] = _doc("env CTXREVIEW_JIRA_TOKEN", default=None)
    confluence_url: Optional[str] = _doc("Wiki base URL", default=None)
    confluence_token: Optional[str] = _doc("env CTXREVIEW_CONFLUENCE_TOKEN", default=None)
    max_loc: int = _doc("PRs changing more lines are skipped with a notice", default=5000)


@dataclass
class ServiceConfig:
    host: str = _doc("Bind address", default="127.0.0.1")
    port: int = _doc("Bind port", default=8080)
    jobs: int = _doc("Concurrent review jobs", default=4)
    queue_size: int = _doc("Pending jobs before webhooks get 503", default=64)
    webhook_secrets: dict[str, str] = _doc(
        "Shared secret per provider (env CTXREVIEW_WEBHOOK_SECRET_<PROVIDER>)", default_factory=dict
    )


@dataclass
class EngineConfig:
    agents: AgentSettings = field(default_factory=AgentSettings)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    chunker: ChunkerConfig = field(default_factory=ChunkerConfig)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    blending: BlendingConfig = field(default_factory=BlendingConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    vcs: VcsConfig = field(default_factory=VcsConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    # typed views used by the pipeline

    @property
    def enabled_agents(self) -> list[AgentKind]:
        return sorted({AgentKind(a) for a in self.agents.enabled}, key=lambda a: a.rank)

    @property
    def thresholds(self) -> dict[AgentKind, float]:
        return {AgentKind(a): t for a, t in self.agents.thresholds.items()}

    @property
    def review_minutes(self) -> dict[SizeClass, int]:
        return {SizeClass(c): m for c, m in self.features.review_minutes.items()}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "EngineConfig":
        errors = []
        agent_names = {a.value for a in AgentKind}
        if not self.agents.enabled:
            errors.append("agents.enabled: at least one agent must be enabled")
        for name in self.agents.enabled:
            if name not in agent_names:
                errors.append(f"agents.enabled: unknown agent {name!r}")
        for name, t in self.agents.thresholds.items():
            if name not in agent_names:
                errors.append(f"agents.thresholds: unknown agent {name!r}")
            if not 0 <= t <= 1:
                errors.append(f"agents.thresholds.{name}: must be within [0, 1]")
        if not 0 <= self.agents.default_threshold <= 1:
            errors.append("agents.default_threshold: must be within [0, 1]")
        r = self.retrieval
        for label, value in (("top_k", r.top_k), ("budget_tokens", r.budget_tokens), ("embedder_dim", r.embedder_dim)):
            if value <= 0:
                errors.append(f"retrieval.{label}: must be positive")
        if not 0 <= r.min_similarity <= 1:
            errors.append("retrieval.min_similarity: must be within [0, 1]")
        if r.chars_per_token <= 0:
            errors.append("retrieval.chars_per_token: must be positive")
        if r.embedder not in ("hashing", "http", "none"):
            errors.append(f"retrieval.embedder: unknown embedder {r.embedder!r}")
        if r.embedder == "http" and not r.embedder_url:
            errors.append("retrieval.embedder_url: required for the http embedder")
        c = self.chunker
        if c.max_chunk_lines < 1 or c.ttl_minutes <= 0 or c.workers < 1:
            errors.append("chunker: max_chunk_lines, ttl_minutes and workers must be positive")
        g = self.gateway
        if g.provider not in ("mock", "openai", "anthropic"):
            errors.append(f"gateway.provider: unknown provider {g.provider!r}")
        if g.provider == "mock" and g.mock_script and not Path(g.mock_script).is_file():
            errors.append(f"gateway.mock_script: no such file {g.mock_script}")
        if g.max_concurrency < 1 or g.attempts < 1 or g.max_output_tokens < 1:
            errors.append("gateway: max_concurrency, attempts and max_output_tokens must be positive")
        known_dims = {"confidence-filter", "overlap-summarize"}
        if sorted(self.blending.order) != sorted(known_dims):
            errors.append(f"blending.order: must list each of {sorted(known_dims)} exactly once")
        size_names = {s.value for s in SizeClass}
        for name, minutes in self.features.review_minutes.items():
            if name not in size_names:
                errors.append(f"features.review_minutes: unknown size class {name!r}")
            elif minutes < 1:
                errors.append(f"features.review_minutes.{name}: must be positive")
        if self.vcs.max_loc < 1:
            errors.append("vcs.max_loc: must be positive")
        s = self.service
        if s.jobs < 1 or s.queue_size < 1:
            errors.append("service: jobs and queue_size must be positive")
        for name in s.webhook_secrets:
            if name not in ("github", "gitlab", "bitbucket"):
                errors.append(f"service.webhook_secrets: unknown provider {name!r}")
        if errors:
            raise ConfigError("; ".join(errors))
        return self


def _coerce(tp: Any, value: Any, path: str) -> Any:
    origin = get_origin(tp)
    if origin is Union:
        args = [a for a in get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return _build(tp, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        (item,) = get_args(tp)
        return [_coerce(item, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        _, vt = get_args(tp)
        return {str(k): _coerce(vt, v, f"{path}.{k}") for k, v in value.items()}
    if tp is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if tp in (int, float, str, bool):
        if not isinstance(value, tp) or (tp is not bool and isinstance(value, bool)):
            raise ConfigError(f"{path}: expected {tp.__name__}, got {type(value).__name__}")
        return value
    raise ConfigError(f"{path}: unsupported type")  # pragma: no cover


def _build(cls: type, data: dict, prefix: str = "") -> Any:
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = prefix or "top level"
        raise ConfigError(f"unknown key(s) at {where}: {', '.join(map(str, unknown))}")
    kwargs = {k: _coerce(hints[k], v, f"{prefix}.{k}" if prefix else k) for k, v in data.items()}
    return cls(**kwargs)


_ENV_SECRETS = {
    "API_KEY": ("gateway", "api_key"),
    "GITHUB_TOKEN": ("vcs", "github_token"),
    "GITLAB_TOKEN": ("vcs", "gitlab_token"),
    "BITBUCKET_TOKEN": ("vcs", "bitbucket_token"),
    "JIRA_TOKEN": ("vcs", "jira_token"),
    "CONFLUENCE_TOKEN": ("vcs", "confluence_token"),
}


def apply_env(cfg: EngineConfig, env: Optional[dict[str, str]] = None) -> EngineConfig:
    env = dict(os.environ if env is None else env)
    for suffix, (section, name) in _ENV_SECRETS.items():
        value = env.get(ENV_PREFIX + suffix)
        if value:
            setattr(getattr(cfg, section), name, value)
    for provider in ("github", "gitlab", "bitbucket"):
        value = env.get(f"{ENV_PREFIX}WEBHOOK_SECRET_{provider.upper()}")
        if value:
            cfg.service.webhook_secrets[provider] = value
    return cfg


def parse_config(text: str, *, base_dir: Optional[Path] = None, env: Optional[dict[str, str]] = None) -> EngineConfig:
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    cfg = _build(EngineConfig, data)
    if base_dir is not None and cfg.gateway.mock_script and not Path(cfg.gateway.mock_script).is_absolute():
        cfg.gateway.mock_script = str(base_dir / cfg.gateway.mock_script)
    return apply_env(cfg, env).validate()


def load_config(path: Union[str, Path, None] = None, *, env: Optional[dict[str, str]] = None) -> EngineConfig:
    """Load and validate a config file; ``None`` yields validated defaults."""
    if path is None:
        return apply_env(EngineConfig(), env).validate()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from None
    return parse_config(text, base_dir=p.parent, env=env)


def reference() -> str:
    """YAML of every setting at its default, each preceded by its description."""
    lines = ["# ctxreview configuration reference (all values are the defaults)"]
    cfg = EngineConfig()
    for section in dataclasses.fields(EngineConfig):
        lines.append(f"{section.name}:")
        obj = getattr(cfg, section.name)
        for f in dataclasses.fields(obj):
            lines.append(f"  # {f.metadata.get('doc', '')}")
            dumped = yaml.safe_dump({f.name: getattr(obj, f.name)}, default_flow_style=False, sort_keys=False)
            lines.extend("  " + line for line in dumped.rstrip("\n").splitlines())
    return "\n".join(lines) + "\n"
