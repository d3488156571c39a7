"""Command-line pipeline driver.

Every subcommand is idempotent given identical inputs and seed; failures
exit non-zero and print a machine-readable JSON error to stderr (exit
code 2 for missing files, 1 otherwise).
"""
from __future__ import annotations

import functools
import json
import sys

import click

from . import pipeline
from .config import load_config, save_config
from .errors import CarbonformError, MissingFile
from .synth import CitySpec, generate_city


def _emit_error(exc: Exception) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, MissingFile):
        payload["path"] = exc.path
    elif isinstance(exc, FileNotFoundError):
        payload["path"] = str(exc.filename)
    print(json.dumps(payload), file=sys.stderr)
    return 2 if isinstance(exc, (MissingFile, FileNotFoundError)) else 1


def _stage(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (CarbonformError, FileNotFoundError, ValueError, KeyError) as exc:
            sys.exit(_emit_error(exc))

    return wrapper


def _config(ctx, input_dir, output_dir):
    return load_config(
        path=ctx.obj.get("config"),
        input_dir=input_dir,
        output_dir=output_dir,
        seed=ctx.obj.get("seed"),
        folds=ctx.obj.get("folds"),
    )


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="Pipeline config JSON.")
@click.option("--seed", type=int, default=None, help="Master seed override.")
@click.option("--folds", type=int, default=None, help="Cross-fitting fold count override.")
@click.pass_context
def main(ctx, config_path, seed, folds):
    """Built-environment travel-emission effects: estimation and planning."""
    ctx.ensure_object(dict)
    ctx.obj.update(config=config_path, seed=seed, folds=folds)


_input_opt = click.option("--input-dir", "-i", type=click.Path(), default=None, help="Directory with raw input files.")
_output_opt = click.option("--output-dir", "-o", type=click.Path(), default=None, help="Artifact directory.")


@main.command("ingest")
@_input_opt
@_output_opt
@click.pass_context
@_stage
def ingest_cmd(ctx, input_dir, output_dir):
    """Validate raw inputs; write ingest_report.json."""
    report = pipeline.run_ingest(_config(ctx, input_dir, output_dir))
    n_issues = len(report["issues"])
    click.echo(f"parsed {report['counts']} with {n_issues} issue(s)")
    if n_issues:
        sys.exit(1)


@main.command("features")
@_input_opt
@_output_opt
@click.pass_context
@_stage
def features_cmd(ctx, input_dir, output_dir):
    """Aggregate to neighborhood profiles; write features.csv and profiles.json."""
    profiles = pipeline.run_features(_config(ctx, input_dir, output_dir))
    click.echo(f"built {len(profiles)} neighborhood profiles")


@main.command("fit")
@_input_opt
@_output_opt
@click.pass_context
@_stage
def fit_cmd(ctx, input_dir, output_dir):
    """Cross-fit nuisances and fit the effect forest; write model.json."""
    model = pipeline.run_fit(_config(ctx, input_dir, output_dir))
    click.echo(f"fitted effect forest with {len(model.trees)} trees on {model.n_units} units")


@main.command("effects")
@_input_opt
@_output_opt
@click.pass_context
@_stage
def effects_cmd(ctx, input_dir, output_dir):
    """Estimate per-neighborhood effects; write effects.csv and metrics.json."""
    estimates = pipeline.run_effects(_config(ctx, input_dir, output_dir))
    click.echo(f"estimated effects for {len(estimates)} neighborhoods")


@main.command("decompose")
@_input_opt
@_output_opt
@click.pass_context
@_stage
def decompose_cmd(ctx, input_dir, output_dir):
    """Decompose mean absolute effects into shares; write decomposition.json."""
    doc = pipeline.run_decompose(_config(ctx, input_dir, output_dir))
    shares = ", ".join(f"{k}={v:.1f}%" for k, v in doc["per_dimension_percent"].items())
    click.echo(shares)


@main.command("explain")
@_input_opt
@_output_opt
@click.pass_context
@_stage
def explain_cmd(ctx, input_dir, output_dir):
    """SHAP exports and multi-run moderation screening; write moderation.json."""
    report = pipeline.run_explain(_config(ctx, input_dir, output_dir))
    names = [f"{e.confounder}({e.scope},{e.sign})" for e in report.qualified()]
    click.echo("qualified moderators: " + (", ".join(names) if names else "none"))


@main.command("scenario")
@_input_opt
@_output_opt
@click.pass_context
@_stage
def scenario_cmd(ctx, input_dir, output_dir):
    """Evaluate preset and custom allocations; write scenario_report.json."""
    results = pipeline.run_scenario(_config(ctx, input_dir, output_dir))
    for r in results:
        click.echo(f"{r.name}: {r.relative_to_average:+.1%} vs city average")


@main.command("run")
@_input_opt
@_output_opt
@click.option("--with-explain", is_flag=True, default=False, help="Include the (slow) moderation stage.")
@click.pass_context
@_stage
def run_cmd(ctx, input_dir, output_dir, with_explain):
    """Run the full pipeline."""
    pipeline.run_all(_config(ctx, input_dir, output_dir), include_explain=with_explain)
    click.echo("pipeline complete")


@main.command("synth")
@click.option("--out", type=click.Path(), required=True, help="Fixture city directory to create.")
@click.option("--neighborhoods", type=int, default=190, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_stage
def synth_cmd(out, neighborhoods, seed):
    """Generate the synthetic fixture city (all input files plus truth.csv)."""
    generate_city(CitySpec(n_neighborhoods=neighborhoods, seed=seed), out)
    click.echo(f"wrote fixture city with {neighborhoods} neighborhoods to {out}")


@main.command("config")
@click.option("--out", type=click.Path(), required=True, help="Where to write the default config.")
@_stage
def config_cmd(out):
    """Write a default config JSON to edit."""
    save_config(load_config(), out)
    click.echo(f"wrote default config to {out}")


@main.command("serve")
@_output_opt
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--ui-dir", type=click.Path(), default=None, help="Static UI assets to serve at /.")
@click.pass_context
@_stage
def serve_cmd(ctx, output_dir, host, port, ui_dir):
    """Serve the read-only planning API over a completed pipeline run."""
    import uvicorn

    from .server import create_app

    config = _config(ctx, None, output_dir)
    app = create_app(config.output_dir, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":  # pragma: no cover
    main()
