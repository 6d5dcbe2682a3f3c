from pathlib import Path
from typing import Optional

import click
import numpy as np
import structlog

from src.cli.common import ExistingPath, PathType, echo_json, load_data, model_classes, parse_range
from src.models.model import SpineModel
from src.services import analysis
from src.services.model_store import load_model
from src.services.preprocessing import transform

logger = structlog.get_logger(__name__)

MODES = ("saliency", "perturb", "active", "components")


def _model_range(model: SpineModel, X: np.ndarray, raw: Optional[str], dim: int) -> tuple[float, float]:
    """Profile bounds in model space; ``raw`` is given in data units."""
    if raw is None:
        return float(X[:, dim].min()), float(X[:, dim].max())
    lo, hi = parse_range(raw)
    scaler = model.x_scaler
    if scaler is None or not scaler.scale:
        return lo, hi
    shift, scale = scaler.shift[dim], scaler.scale[dim]
    return (lo - shift) / scale, (hi - shift) / scale


@click.command()
@click.option("--model", "model_path", type=ExistingPath, required=True)
@click.option("--data", type=ExistingPath, default=None)
@click.option("--images", type=ExistingPath, default=None)
@click.option("--labels", type=ExistingPath, default=None)
@click.option("--mode", type=click.Choice(MODES), required=True)
@click.option("--out", type=PathType, required=True, help=".csv for CSV, anything else for gnuplot columns.")
@click.option("--head", type=click.IntRange(min=0), default=None, help="Output head to analyse.")
@click.option("--bins", type=click.IntRange(min=1), default=500, show_default=True)
@click.option("--draws", type=click.IntRange(min=1), default=64, show_default=True)
@click.option("--scale", "scale_range", default="0.9:1.1", show_default=True, help="Perturbation factor range lo:hi.")
@click.option("--range", "value_range", default=None, help="Profile interval lo:hi in data units.")
@click.option("--slice-dim", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--points", type=click.IntRange(min=2), default=200, show_default=True, help="Grid points per axis.")
@click.option("--seed", type=int, default=None)
@click.pass_context
def analyze(
    ctx: click.Context,
    model_path, data, images, labels, mode: str, out: Path, head: Optional[int],
    bins: int, draws: int, scale_range: str, value_range: Optional[str], slice_dim: int,
    points: int, seed: Optional[int],
):
    """Saliency, perturbation profiles, active maps or component export."""
    model = load_model(model_path)
    dataset = load_data(data, images, labels, class_names=model_classes(model))
    X = transform(model.x_scaler, dataset.features)
    seed = ctx.obj.settings.default_seed if seed is None else seed

    if mode == "saliency":
        scores, winners = analysis.saliency_batch(model, X, head)
        analysis.write_table(analysis.saliency_frame(scores, winners, dataset.features), out)
        report = analysis.build_report(model, mode, X.shape[0], saliency_argmax=winners.tolist())

    elif mode == "perturb":
        lo, hi = _model_range(model, X, value_range, slice_dim)
        scale = parse_range(scale_range)
        std = analysis.perturbation_profile(
            model, lo, hi,
            n_bins=bins, n_draws=draws, scale=scale, seed=seed,
            slice_dim=slice_dim, head=head or 0, threads=ctx.obj.threads,
        )
        grid = analysis.profile_grid(model, lo, hi, bins, slice_dim)
        analysis.write_table(analysis.std_frame(std, grid, slice_dim), out)
        shares = analysis.locality_scores(model, std, grid, head or 0)
        logger.info("locality_measured", local_fraction=analysis.summarize_locality(shares))
        report = analysis.build_report(model, mode, bins, std_shape=std.shape)

    elif mode == "active":
        polytopes, components = analysis.active_map(model, X)
        analysis.write_table(analysis.active_frame(polytopes, components, dataset.features), out)
        report = analysis.build_report(
            model, mode, X.shape[0],
            active_polytopes=polytopes.tolist(),
            active_components=components.tolist(),
            expressed_components=int(np.unique(components).size),
        )

    else:
        if model.input_dim > 2:
            grid = X
        else:
            ranges = [(float(X[:, j].min()), float(X[:, j].max())) for j in range(model.input_dim)]
            grid = analysis.grid_from_range(model, ranges, points)
        export = analysis.export_components(model, grid)
        gap = float(np.max(np.abs(analysis.recompose(model, export) - export.curves[
            [f"y{h}" for h in range(model.num_heads)]
        ].to_numpy())))
        logger.info("components_recomposed", max_gap=gap)
        analysis.write_table(export.curves, out)
        analysis.write_table(export.metadata, out.with_name(out.stem + "_meta.csv"))
        report = analysis.build_report(model, mode, grid.shape[0])

    echo_json(report)
