import click

from src.cli.common import ExistingPath, PathType
from src.services.model_store import load_model, merge_pre_linear, save_model


@click.command()
@click.option("--model", "model_path", type=ExistingPath, required=True)
@click.option("--out", type=PathType, required=True)
def merge(model_path, out):
    """Fold the pre-linear layer into the linear components."""
    save_model(merge_pre_linear(load_model(model_path)), out)
