"""Webhook service: acknowledge immediately, review on a bounded worker pool."""

from __future__ import annotations

import itertools
import logging
import queue
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ctxreview.config import EngineConfig
from ctxreview.features import EmptyChatPromptError, parse_chat_command
from ctxreview.integrations import (
    BitbucketClient,
    GitHubClient,
    GitLabClient,
    SignatureError,
    UnknownProviderError,
    UnsupportedEventError,
    WebhookError,
    parse_webhook,
)
from ctxreview.integrations.clients import VcsClient
from ctxreview.models import EventKind, ProviderId, PullRequestEvent
from ctxreview.pipeline import RunReport, Services, answer_chat_command, make_services, review_pull_request

logger = logging.getLogger(__name__)

EMPTY_PROMPT_REPLY = "Add a question after the trigger, for example `#dd why is this lock needed?`"


class QueueFullError(RuntimeError):
    pass


class JobQueue:
    """Bounded FIFO drained by a fixed pool of daemon worker threads."""

    def __init__(self, workers: int, maxsize: int) -> None:
        self._queue: queue.Queue = queue.Queue(maxsize=maxsize)
        self._ids = itertools.count(1)
        self._threads = [threading.Thread(target=self._work, daemon=True, name=f"review-{i}") for i in range(workers)]
        for t in self._threads:
            t.start()

    def submit(self, fn: Callable[[], object]) -> int:
        job_id = next(self._ids)
        try:
            self._queue.put_nowait((job_id, fn))
        except queue.Full:
            raise QueueFullError("review queue is full") from None
        return job_id

    @property
    def pending(self) -> int:
        return self._queue.qsize()

    def join(self) -> None:
        self._queue.join()

    def _work(self) -> None:
        while True:
            job_id, fn = self._queue.get()
            try:
                fn()
            except Exception:  # a failing job must not kill its worker
                logger.exception("job %d crashed", job_id)
            finally:
                self._queue.task_done()


def default_vcs_factory(cfg: EngineConfig) -> Callable[[ProviderId], VcsClient]:
    def make(provider: ProviderId) -> VcsClient:
        v = cfg.vcs
        if provider is ProviderId.GITHUB:
            return GitHubClient(v.github_token or "")
        if provider is ProviderId.GITLAB:
            return GitLabClient(v.gitlab_token or "")
        return BitbucketClient(v.bitbucket_token or "")

    return make


@dataclass
class ServiceState:
    cfg: EngineConfig
    services: Services
    vcs_for: Callable[[ProviderId], VcsClient]
    jobs: JobQueue
    runs: list[RunReport] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def record(self, run: RunReport) -> None:
        with self.lock:
            self.runs.append(run)


def _review_job(state: ServiceState, event: PullRequestEvent) -> Callable[[], None]:
    def job() -> None:
        run = review_pull_request(event, state.cfg, state.services, state.vcs_for(event.provider_id))
        logger.info("review %s#%d finished: %s", *event.pr_ref, run.outcome.value)
        state.record(run)

    return job


def _chat_job(state: ServiceState, event: PullRequestEvent, cmd) -> Callable[[], None]:
    def job() -> None:
        answer_chat_command(event, cmd, state.cfg, state.services, state.vcs_for(event.provider_id))

    return job


def _reply_job(state: ServiceState, event: PullRequestEvent, text: str) -> Callable[[], None]:
    def job() -> None:
        vcs = state.vcs_for(event.provider_id)
        if event.comment is not None:
            vcs.reply_to_comment(event, event.comment.comment_id, text)
        else:
            vcs.post_pr_comment(event, text)

    return job


def create_app(
    cfg: EngineConfig,
    *,
    services: Optional[Services] = None,
    vcs_for: Optional[Callable[[ProviderId], VcsClient]] = None,
) -> FastAPI:
    state = ServiceState(
        cfg=cfg,
        services=services or make_services(cfg),
        vcs_for=vcs_for or default_vcs_factory(cfg),
        jobs=JobQueue(cfg.service.jobs, cfg.service.queue_size),
    )
    app = FastAPI(title="ctxreview")
    app.state.engine = state

    def reply(code: int, **body: object) -> JSONResponse:
        return JSONResponse(body, status_code=code)

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "pending": state.jobs.pending}

    @app.post("/webhook/{provider}")
    async def webhook(provider: str, request: Request) -> JSONResponse:
        raw = await request.body()
        try:
            pid = ProviderId(provider.lower())
        except ValueError:
            return reply(404, error=f"unknown provider {provider!r}")
        try:
            event = parse_webhook(
                raw, pid, headers=dict(request.headers), secret=cfg.service.webhook_secrets.get(pid.value)
            )
        except SignatureError as exc:
            return reply(401, error=str(exc))
        except UnknownProviderError as exc:
            return reply(404, error=str(exc))
        except UnsupportedEventError as exc:
            return reply(200, status="ignored", reason=str(exc))
        except WebhookError as exc:
            return reply(400, error=str(exc))

        if event.event_kind is EventKind.COMMENT_ADDED:
            if not cfg.features.chat or event.comment is None:
                return reply(200, status="ignored", reason="comment is not a chat command")
            anchor = None
            if event.comment.file_path and event.comment.line_number:
                anchor = (event.comment.file_path, event.comment.line_number)
            try:
                cmd = parse_chat_command(event.comment.body, author=event.comment.author, anchor=anchor)
            except EmptyChatPromptError:
                job = _reply_job(state, event, EMPTY_PROMPT_REPLY)
            else:
                if cmd is None:
                    return reply(200, status="ignored", reason="comment is not a chat command")
                job = _chat_job(state, event, cmd)
        else:
            job = _review_job(state, event)
        try:
            job_id = state.jobs.submit(job)
        except QueueFullError as exc:
            return reply(503, error=str(exc))
        return reply(202, status="accepted", job=job_id)

    return app


def serve(cfg: EngineConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(cfg), host=cfg.service.host, port=cfg.service.port)
