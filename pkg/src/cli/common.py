"""Helpers shared by the subcommands: data loading, structure text and training flags."""
from pathlib import Path
from typing import Callable, Optional

import click
import structlog
from pydantic import BaseModel

from src.errors import InputError
from src.models.model import SpineModel
from src.models.schemas import EvaluationForm, LossKind, TaskKind, TrainConfig
from src.services.datasets import Dataset, default_schema, load_csv, load_idx

logger = structlog.get_logger(__name__)

PathType = click.Path(dir_okay=False, path_type=Path)
ExistingPath = click.Path(exists=True, dir_okay=False, path_type=Path)


def echo_json(result: BaseModel) -> None:
    click.echo(result.model_dump_json(indent=2))


def read_structure(value: str) -> str:
    """``value`` is a path to a structure file or the structure text itself."""
    path = Path(value)
    if "\n" not in value and "=" not in value and path.is_file():
        return path.read_text()
    return value


def load_data(
    data: Optional[Path] = None,
    images: Optional[Path] = None,
    labels: Optional[Path] = None,
    class_names: Optional[list[str]] = None,
) -> Dataset:
    """
    A headered CSV, or an IDX image/label pair (raw pixels in [0, 1]).

    ``class_names`` fixes the label numbering, for files scored against an
    existing model or training set.
    """
    if data is not None:
        if images is not None or labels is not None:
            raise click.UsageError("give either --data or --images/--labels, not both")
        return load_csv(data, default_schema(data), class_names=class_names)
    if images is None or labels is None:
        raise click.UsageError("missing data: pass --data, or both --images and --labels")
    return load_idx(images, labels, class_names=class_names)


def model_classes(model: SpineModel) -> Optional[list[str]]:
    """The class list a dataset must be numbered by to score ``model``."""
    return model.class_names if model.task is TaskKind.CLASSIFICATION else None


def parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise InputError(f"{what} must be comma-separated numbers, got {text!r}") from exc


def parse_range(text: str) -> tuple[float, float]:
    """``"lo:hi"``"""
    parts = text.split(":")
    if len(parts) != 2:
        raise InputError(f"range must look like lo:hi, got {text!r}")
    lo, hi = parse_floats(",".join(parts), "range")
    return lo, hi


def training_options(epochs: int = 2000) -> Callable:
    """Flags every training-like command shares; ``epochs`` sets the default epoch count."""

    def decorate(func: Callable) -> Callable:
        options = [
            click.option("--epochs", type=click.IntRange(min=0), default=epochs, show_default=True),
            click.option("--lr", type=click.FloatRange(min=0, min_open=True), default=1e-2, show_default=True),
            click.option(
                "--batch",
                type=click.IntRange(min=0),
                default=0,
                show_default=True,
                help="Mini-batch size; 0 trains full batch.",
            ),
            click.option("--seed", type=int, default=None, help="Defaults to SPINE_DEFAULT_SEED."),
            click.option("--log-every", type=click.IntRange(min=1), default=100, show_default=True),
        ]
        for option in reversed(options):
            func = option(func)
        return func

    return decorate


def build_train_config(
    ctx: click.Context,
    epochs: int,
    lr: float,
    batch: int,
    seed: Optional[int],
    log_every: int,
    loss: Optional[str] = None,
    form: EvaluationForm = EvaluationForm.LOGEXP,
) -> TrainConfig:
    run = ctx.obj
    return TrainConfig(
        epochs=epochs,
        batch_size=batch,
        learning_rate=lr,
        seed=run.settings.default_seed if seed is None else seed,
        loss=LossKind(loss) if loss else None,
        form=form,
        log_every=log_every,
        grad_clip=run.settings.grad_clip,
        threads=run.threads,
    )
