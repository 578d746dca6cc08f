"""Command-line interface: one subcommand per pipeline stage plus audit/demo."""

from __future__ import annotations

import csv
import sys
from pathlib import Path

import click

from .demo import write_demo
from .pipeline import STAGES, ExperimentConfig, PipelineError, run_pipeline
from .replygen import aggregate_sentiment, audit_majority_vote


def _load_config(config_path: str | None, seed: int | None) -> ExperimentConfig:
    if not config_path:
        raise click.UsageError("--config is required for pipeline stages")
    try:
        config = ExperimentConfig.load(config_path)
    except (OSError, PipelineError) as exc:
        raise click.ClickException(f"config: {exc}") from exc
    if seed is not None:
        config.override_seed(seed)
    return config


def _run(config_path, seed, out, force, stages):
    config = _load_config(config_path, seed)
    try:
        run_pipeline(config, out, stages=stages, force=force)
    except PipelineError as exc:
        raise click.ClickException(str(exc)) from exc
    for stage in stages or STAGES:
        click.echo(f"{stage}: ok")


def _stage_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      help="Experiment config YAML.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Override all stage seeds (seed, seed+1, seed+2).")(fn)
    fn = click.option("--out", default="run", show_default=True,
                      help="Run directory for stage outputs.")(fn)
    fn = click.option("--force", is_flag=True, help="Re-run even if inputs are unchanged.")(fn)
    return fn


@click.group()
@click.version_option(package_name="newsnudge")
def main():
    """Simulated news-nudge experiments: cohort, randomize, simulate, estimate."""


def _make_stage_command(stage: str, help_text: str):
    @main.command(name=stage, help=help_text)
    @_stage_options
    def _cmd(config_path, seed, out, force):
        upstream = STAGES[: STAGES.index(stage) + 1]
        _run(config_path, seed, out, force, upstream)

    return _cmd


_make_stage_command("cohort", "Apply the six-stage cohort funnel to the user file.")
_make_stage_command("assign", "Randomize the cohort into three arms and check balance.")
_make_stage_command("simulate", "Run the deterministic field simulation and event log.")
_make_stage_command("measure", "Take pre/post engagement snapshots and compute deltas.")
_make_stage_command("estimate", "Estimate ITT and Treated effects with exclusion variants.")
_make_stage_command("report", "Render delimited tables, a JSON bundle, and PNG figures.")


@main.command(help="Run every stage end to end.")
@_stage_options
def run(config_path, seed, out, force):
    _run(config_path, seed, out, force, None)


@main.command(help="Write a deterministic demo users.csv and config.yaml.")
@click.option("--out", default="demo", show_default=True, help="Target directory.")
def demo(out):
    config_path = write_demo(out)
    click.echo(f"demo inputs written; run: newsnudge run --config {config_path} --out {Path(out) / 'run'}")


@main.command(help="Summarize annotation and sentiment label files.")
@click.option("--annotations", type=click.Path(exists=True),
              help="CSV of per-reply annotator labels (one column per annotator).")
@click.option("--sentiment", type=click.Path(exists=True),
              help="CSV with columns gender,sentiment for replies-to-bot labels.")
@click.option("--out", default=None, help="Optional directory for CSV summaries.")
def audit(annotations, sentiment, out):
    if not annotations and not sentiment:
        raise click.UsageError("provide --annotations and/or --sentiment")
    out_dir = Path(out) if out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    if annotations:
        with open(annotations, newline="", encoding="utf-8") as fh:
            matrix = [row for row in csv.reader(fh) if row]
        try:
            sat, unsat, rate = audit_majority_vote(matrix)
        except ValueError as exc:
            raise click.ClickException(f"audit: {exc}") from exc
        click.echo(f"satisfactory: {sat}")
        click.echo(f"unsatisfactory: {unsat}")
        click.echo(f"rate: {100 * rate:.1f}%")
        if out_dir:
            with (out_dir / "audit_summary.csv").open("w", newline="\n", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["satisfactory", "unsatisfactory", "rate_pct"])
                writer.writerow([sat, unsat, f"{100 * rate:.1f}"])
    if sentiment:
        with open(sentiment, newline="", encoding="utf-8") as fh:
            labels = [(row["gender"], row["sentiment"]) for row in csv.DictReader(fh)]
        try:
            table = aggregate_sentiment(labels)
        except ValueError as exc:
            raise click.ClickException(f"audit: {exc}") from exc
        rows = []
        for gender, by_sentiment in table.items():
            for name, (count, pct) in by_sentiment.items():
                click.echo(f"{gender} {name}: {count} ({pct:.2f}%)")
                rows.append([gender, name, count, f"{pct:.2f}"])
        if out_dir:
            with (out_dir / "sentiment_summary.csv").open("w", newline="\n", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["gender", "sentiment", "count", "pct"])
                writer.writerows(rows)


if __name__ == "__main__":
    sys.exit(main())
