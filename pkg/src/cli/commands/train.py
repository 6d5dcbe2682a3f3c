from typing import Optional

import click
import structlog

from src.cli.common import (
    ExistingPath,
    PathType,
    build_train_config,
    echo_json,
    load_data,
    read_structure,
    training_options,
)
from src.errors import DivergenceError
from src.models.schemas import EvaluationForm, TaskKind, TrainSummary
from src.services.classifier import build_from_text
from src.services.datasets import Dataset, split
from src.services.model_store import save_model
from src.services.preprocessing import mnist_scaler
from src.services.trainer import evaluate, fit, write_history

logger = structlog.get_logger(__name__)


def split_for_test(
    dataset: Dataset,
    test_data: Optional[Dataset],
    test_fraction: float,
    seed: int,
) -> tuple[Dataset, Optional[Dataset]]:
    if test_data is not None or test_fraction <= 0:
        return dataset, test_data
    return split(dataset, 1.0 - test_fraction, seed=seed, stratified=dataset.is_classification)


@click.command()
@click.option("--data", type=ExistingPath, default=None, help="Training CSV.")
@click.option("--images", type=ExistingPath, default=None, help="IDX image file.")
@click.option("--labels", type=ExistingPath, default=None, help="IDX label file.")
@click.option("--test-data", type=ExistingPath, default=None, help="Held-out CSV.")
@click.option("--test-images", type=ExistingPath, default=None)
@click.option("--test-labels", type=ExistingPath, default=None)
@click.option(
    "--test-fraction",
    type=click.FloatRange(min=0, max=1, max_open=True),
    default=0.0,
    help="Hold out this share of --data (stratified for classes).",
)
@click.option("--mnist-norm", is_flag=True, help="Standardise pixels with the fixed MNIST mean and sd.")
@click.option("--structure", required=True, help="Structure file or inline structure text.")
@click.option("--a", type=click.FloatRange(min=0, min_open=True), default=10.0, show_default=True)
@click.option("--loss", type=click.Choice(["mse", "nll"]), default=None)
@click.option("--form", type=click.Choice([f.value for f in EvaluationForm]), default="logexp", show_default=True)
@click.option("--pre-linear", type=click.IntRange(min=1), default=None, help="Width of a pre-linear layer.")
@click.option("--model-out", type=PathType, default=None)
@click.option("--history-out", type=PathType, default=None)
@training_options()
@click.pass_context
def train(
    ctx: click.Context,
    data, images, labels, test_data, test_images, test_labels, test_fraction, mnist_norm,
    structure: str, a: float, loss, form: str, pre_linear, model_out, history_out,
    epochs: int, lr: float, batch: int, seed, log_every: int,
):
    """Build a model from structure text and fit it."""
    config = build_train_config(ctx, epochs, lr, batch, seed, log_every, loss, EvaluationForm(form))
    dataset = load_data(data, images, labels)
    held_out = None
    if test_data is not None or test_images is not None:
        held_out = load_data(test_data, test_images, test_labels, class_names=dataset.class_names)
    dataset, held_out = split_for_test(dataset, held_out, test_fraction, config.seed)

    task = TaskKind.CLASSIFICATION if dataset.is_classification else TaskKind.REGRESSION
    model = build_from_text(
        read_structure(structure),
        input_dim=dataset.features.shape[1],
        task=task,
        class_names=dataset.class_names,
        target_names=dataset.target_names or None,
        a=a,
        seed=config.seed,
        pre_linear_width=pre_linear,
    )
    model.form = config.form
    if mnist_norm:
        model.x_scaler = mnist_scaler(dataset.features.shape[1])

    history = fit(model, dataset, config)
    if history_out is not None:
        write_history(history, history_out)
    if history.diverged:
        raise DivergenceError(f"training diverged after {len(history.records)} epochs", history=history)
    if model_out is not None:
        save_model(model, model_out)

    final = history.final
    echo_json(
        TrainSummary(
            examples=len(dataset),
            params=model.num_params,
            epochs_run=len(history.records),
            best_epoch=history.best_epoch,
            best_loss=history.best_loss,
            best_metric=history.best_metric,
            final_metric=final.metric if final else None,
            metric_name=history.metric_name,
            test_metric=evaluate(model, held_out, scale_from=dataset).metric if held_out is not None else None,
            clip_events=history.clip_events,
        )
    )
