"""Command-line entry point.

Exit codes: 0 success, 1 the review produced errors, 2 invalid usage or config.
"""

from __future__ import annotations

import logging
import sys
from typing import Optional

import click

from ctxreview import analytics
from ctxreview.config import ConfigError, EngineConfig, load_config, reference
from ctxreview.integrations import BranchNotFoundError, VcsError

EXIT_OK = 0
EXIT_REVIEW_ERRORS = 1
EXIT_USAGE = 2


def _load(path: Optional[str]) -> EngineConfig:
    try:
        return load_config(path)
    except ConfigError as exc:
        click.echo(f"invalid configuration: {exc}", err=True)
        sys.exit(EXIT_USAGE)


config_option = click.option(
    "--config", "config_path", type=click.Path(dir_okay=False), default=None, help="YAML configuration file."
)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Contextual multi-agent code review."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@config_option
def serve(config_path: Optional[str]) -> None:
    """Run the webhook service."""
    from ctxreview.service import serve as run_service

    run_service(_load(config_path))


@main.command()
@click.argument("repo", type=click.Path(exists=True, file_okay=False))
@click.option("--base", required=True, help="Target ref the change merges into.")
@click.option("--head", required=True, help="Ref holding the change.")
@click.option("--json", "as_json", is_flag=True, help="Emit the report as JSON.")
@config_option
def review(repo: str, base: str, head: str, as_json: bool, config_path: Optional[str]) -> None:
    """Review BASE...HEAD of a local repository; nothing is posted."""
    from ctxreview.pipeline import RunOutcome, render_run_json, render_run_text, review_local

    cfg = _load(config_path)
    try:
        run = review_local(repo, base, head, cfg)
    except BranchNotFoundError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    except VcsError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    click.echo(render_run_json(run) if as_json else render_run_text(run), nl=False)
    if run.outcome in (RunOutcome.FAILED, RunOutcome.DEGRADED):
        sys.exit(EXIT_REVIEW_ERRORS)


@main.group("analytics")
def analytics_group() -> None:
    """Review-time experiment reports."""


@analytics_group.command("report")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Emit only the JSON report.")
def analytics_report(file: str, as_json: bool) -> None:
    """Table-style report from a file of PR records."""
    try:
        records = analytics.load_records(file)
        report = analytics.build_report(records)
    except ValueError as exc:
        click.echo(f"invalid records: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    if as_json:
        click.echo(report.to_json())
    else:
        click.echo(analytics.render_text(report))
        click.echo()
        click.echo(report.to_json())


@main.group("config")
def config_group() -> None:
    """Configuration helpers."""


@config_group.command("check")
@config_option
def config_check(config_path: Optional[str]) -> None:
    """Validate a configuration file."""
    cfg = _load(config_path)
    click.echo(f"configuration ok: {len(cfg.enabled_agents)} agent(s), provider {cfg.gateway.provider}")


@config_group.command("reference")
def config_reference() -> None:
    """Print every setting with its default."""
    click.echo(reference(), nl=False)


if __name__ == "__main__":  # pragma: no cover
    main()
