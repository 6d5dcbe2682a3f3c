"""
Click group wiring every subcommand, plus the exit-code contract.

Exit codes: 0 success, 1 usage or structure error, 2 data error,
3 numerical divergence. Errors print one ``error: ...`` line on stderr.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import click
import structlog
from pydantic import ValidationError

from src.cli.commands import analyze, data, evaluate, evolve, experiments, merge, train
from src.config import Settings, get_settings, read_run_config
from src.errors import SpineError
from src.main import configure_logging

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


@dataclass
class RunContext:
    settings: Settings
    threads: int = 1
    run_config: dict[str, Any] = field(default_factory=dict)


@click.group()
@click.option(
    "--threads",
    type=click.IntRange(min=1),
    default=None,
    help="Worker threads for batch gradients and profiles (falls back to SPINE_THREADS).",
)
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Flat key=value file; keys mirror the long flag names.",
)
@click.option("--verbose", is_flag=True, help="Log at DEBUG level.")
@click.pass_context
def cli(ctx: click.Context, threads: Optional[int], config_path: Optional[Path], verbose: bool):
    """Piecewise models from unions of intersections of learnable inequalities."""
    settings = get_settings()
    configure_logging("DEBUG" if verbose else settings.log_level, settings.log_format)

    values = read_run_config(config_path) if config_path else {}
    if values:
        # flags given on the command line still win over these defaults
        ctx.default_map = {name: dict(values) for name in cli.commands}
        logger.debug("run_config_loaded", path=str(config_path), keys=sorted(values))
    ctx.obj = RunContext(settings=settings, threads=threads or settings.threads, run_config=values)


cli.add_command(data.gen)
cli.add_command(train.train)
cli.add_command(evaluate.eval_command)
cli.add_command(analyze.analyze)
cli.add_command(evolve.distill)
cli.add_command(evolve.target)
cli.add_command(evolve.demo_maxmin_failure)
cli.add_command(experiments.sweep)
cli.add_command(experiments.noise_study_command)
cli.add_command(merge.merge)


def run(argv: Optional[list[str]] = None) -> int:
    """Invoke the group without click's own exit handling and map errors to exit codes."""
    try:
        result = cli.main(args=argv, prog_name="spine", standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.FileError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_DATA
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.Abort:
        click.echo("error: aborted", err=True)
        return EXIT_USAGE
    except SpineError as exc:
        logger.error("command_failed", code=exc.code, detail=exc.message)
        click.echo(f"error: {exc.message}", err=True)
        return exc.exit_code
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "value"
        click.echo(f"error: invalid {location}: {first['msg']}", err=True)
        return EXIT_USAGE
    return result if isinstance(result, int) else EXIT_OK
