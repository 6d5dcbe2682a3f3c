from typing import Optional

import click

from src.cli.common import ExistingPath, echo_json, load_data, model_classes
from src.errors import InputError
from src.models.schemas import EvalSummary, EvaluationForm
from src.services.datasets import default_schema, load_csv
from src.services.model_store import load_model
from src.services.trainer import evaluate


@click.command("eval")
@click.option("--model", "model_path", type=ExistingPath, required=True)
@click.option("--data", type=ExistingPath, default=None)
@click.option("--images", type=ExistingPath, default=None)
@click.option("--labels", type=ExistingPath, default=None)
@click.option("--form", type=click.Choice([f.value for f in EvaluationForm]), default=None, help="Defaults to the model's form.")
@click.option(
    "--against",
    type=ExistingPath,
    default=None,
    help="Noiseless CSV aligned with --data; adds a second error column.",
)
def eval_command(model_path, data, images, labels, form: Optional[str], against):
    """Report loss and metric of a saved model on a dataset."""
    model = load_model(model_path)
    dataset = load_data(data, images, labels, class_names=model_classes(model))
    chosen = EvaluationForm(form) if form else model.form
    result = evaluate(model, dataset, chosen)

    against_metric = None
    if against is not None:
        if dataset.is_classification:
            raise InputError("--against compares regression targets")
        reference = load_csv(against, default_schema(against))
        # both columns share the noiseless curve's spread
        result = evaluate(model, dataset, chosen, scale_from=reference)
        against_metric = evaluate(model, dataset, chosen, reference=reference, scale_from=reference).metric

    echo_json(
        EvalSummary(
            examples=result.examples,
            form=chosen,
            loss=result.loss,
            metric=result.metric,
            metric_name=result.metric_name,
            against_metric=against_metric,
        )
    )
