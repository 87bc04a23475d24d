"""
Command-line surface: one click subcommand per pipeline stage.

Diagnostics go to standard error through the logger; each command prints a
one-line JSON summary on standard output. `run(argv)` maps outcomes onto exit
codes: 0 success, 1 domain error, 2 usage error.
"""

import functools
import json
from typing import Any, Callable, List, Optional

import click

from app.config.run_config import RunConfig
from app.controllers.pipeline_controller import EVAL_MODES, PipelineController
from app.utils.errors import XridError
from app.utils.logger_util import logger


def run_options(fn: Callable) -> Callable:
    """Flags shared by every stage; anything left unset falls back to the config file, then defaults."""
    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Flat JSON run configuration.")
    @click.option("--seed", type=int, default=None)
    @click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker cap; 1 is bit-exact.")
    @click.option("--preset", type=click.Choice(["desk", "full"]), default=None)
    @click.option("--no-cache", "no_cache", is_flag=True, default=False, help="Bypass the preprocessing cache.")
    @functools.wraps(fn)
    def wrapper(*args: Any, config_path: Optional[str], no_cache: bool, **kwargs: Any):
        return fn(*args, config_path=config_path, use_cache=False if no_cache else None, **kwargs)
    return wrapper


def _controller(config_path: Optional[str], **flags: Any) -> PipelineController:
    config = RunConfig.resolve(config_path, **flags)
    logger.debug("Resolved run configuration: %s", config.model_dump(mode="json"))
    return PipelineController(config)


def _emit(payload: Any) -> None:
    click.echo(json.dumps(payload, sort_keys=True, default=str))


@click.group(name="xrid")
def cli() -> None:
    """Motion-based user identification across VR applications."""


@cli.command()
@run_options
@click.option("--users", "synth_users", type=int, default=None)
@click.option("--minutes", "synth_minutes", type=float, default=None)
@click.option("--modulation", "synth_modulation", type=float, default=None, help="0 removes app influence; >1 exaggerates it.")
@click.option("--rate", "synth_rate_hz", type=float, default=None, help="Native capture rate in Hz.")
@click.option("--out", "data_dir", type=click.Path(file_okay=False), default=None, help="Dataset directory to create.")
def synth(config_path, **flags):
    """Generate a synthetic dataset with a manifest."""
    manifest = _controller(config_path, **flags).synth()
    _emit({"recordings": len(manifest.entries), "users": len(manifest.users), "apps": manifest.apps})


@cli.command()
@run_options
@click.argument("source", type=click.Path(exists=True, file_okay=False))
@click.option("--data", "data_dir", type=click.Path(file_okay=False), default=None)
def ingest(source, config_path, **flags):
    """Validate a folder of <user>__<app>__<session>.csv recordings into the dataset directory."""
    manifest = _controller(config_path, **flags).ingest(source)
    _emit({"recordings": len(manifest.entries), "users": len(manifest.users), "apps": manifest.apps})


@cli.command()
@run_options
@click.option("--data", "data_dir", type=click.Path(file_okay=False), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--dump-csv", is_flag=True, default=False, help="Also write the similarity-model windows as CSV.")
def preprocess(config_path, dump_csv, **flags):
    """Encode every recording to BRV windows (cached)."""
    _emit(_controller(config_path, **flags).preprocess(dump_csv=dump_csv))


@cli.command()
@run_options
@click.option("--model", "kind", type=click.Choice(["slm", "clm"]), required=True)
@click.option("--data", "data_dir", type=click.Path(file_okay=False), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
def train(config_path, kind, **flags):
    """Train the similarity (slm) or classification (clm) model."""
    controller = _controller(config_path, **flags)
    result = controller.train_slm() if kind == "slm" else controller.train_clm()
    _emit({"model": kind, "best_epoch": result.best_epoch, "best_val_accuracy": result.best_val_accuracy,
           "epochs_run": result.epochs_run, "stopped_early": result.stopped_early})


@cli.command()
@run_options
@click.option("--mode", type=click.Choice(list(EVAL_MODES)), required=True)
@click.option("--data", "data_dir", type=click.Path(file_okay=False), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
def evaluate(config_path, mode, **flags):
    """Evaluate a trained model."""
    result = _controller(config_path, **flags).evaluate(mode)
    if hasattr(result, "overall_accuracy"):
        _emit({"mode": mode, "accuracy": result.overall_accuracy, "sequence_accuracy": result.sequence_accuracy,
               "queries": result.n_queries})
    else:
        _emit({"mode": mode, "metric": result.metric, "diagonal": result.diagonal_mean,
               "off_diagonal": result.off_diagonal_mean})


@cli.command()
@run_options
@click.option("--data", "data_dir", type=click.Path(file_okay=False), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
def stats(config_path, **flags):
    """Movement and head-pitch statistics with ANOVA and post-hoc tests."""
    analysis = _controller(config_path, **flags).stats()
    _emit({"anova": [a.to_dict() for a in analysis.anova], "posthoc_significant": sum(p.significant for p in analysis.posthoc)})


@cli.command(name="all")
@run_options
@click.option("--data", "data_dir", type=click.Path(file_okay=False), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
def all_stages(config_path, **flags):
    """Run every stage; synthesizes a dataset first when none exists."""
    results = _controller(config_path, **flags).run_all()
    _emit({"stages": list(results)})


def run(argv: Optional[List[str]] = None) -> int:
    try:
        cli.main(args=argv, prog_name="xrid", standalone_mode=False)
    except click.UsageError as exc:
        if exc.ctx is not None:
            click.echo(exc.ctx.get_usage(), err=True)
        click.echo(f"Error: {exc.format_message()}", err=True)
        return 2
    except click.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except XridError as exc:
        logger.error("%s", exc)
        return 1
    return 0
