from typing import Optional

import click
import pandas as pd

from src.cli.common import (
    ExistingPath,
    PathType,
    build_train_config,
    echo_json,
    load_data,
    model_classes,
    training_options,
)
from src.errors import DivergenceError
from src.models.schemas import (
    ComponentFamily,
    DistillSummary,
    EvaluationForm,
    FailureDemoSummary,
    TargetSummary,
)
from src.services.analysis import expressed_components
from src.services.classifier import build_from_text
from src.services.datasets import gen_sim_regression
from src.services.evolution import (
    DEFAULT_FINETUNE_EPOCHS,
    DEFAULT_NOISE_SCALE,
    RegionSpec,
    distill_to_maxmin,
    targeted_learning,
    train_maxmin_direct,
)
from src.services.experiments import uniform_text
from src.services.model_store import load_model, save_model
from src.services.preprocessing import transform
from src.services.trainer import evaluate, fit


def _check(history) -> None:
    if history.diverged:
        raise DivergenceError(f"fine-tuning diverged after {len(history.records)} epochs", history=history)


@click.command()
@click.option("--model", "model_path", type=ExistingPath, required=True)
@click.option("--data", type=ExistingPath, default=None)
@click.option("--images", type=ExistingPath, default=None)
@click.option("--labels", type=ExistingPath, default=None)
@click.option("--test-data", type=ExistingPath, default=None)
@click.option("--out", type=PathType, default=None, help="Where to save the max-min model.")
@training_options(epochs=DEFAULT_FINETUNE_EPOCHS)
@click.pass_context
def distill(ctx, model_path, data, images, labels, test_data, out, epochs, lr, batch, seed, log_every):
    """Move a log-exp model into max-min form and fine-tune it."""
    model = load_model(model_path)
    dataset = load_data(data, images, labels, class_names=model_classes(model))
    test = load_data(test_data, class_names=model_classes(model)) if test_data is not None else None
    config = build_train_config(ctx, epochs, lr, batch, seed, log_every, form=EvaluationForm.MAXMIN)

    result = distill_to_maxmin(model, dataset, config, test=test)
    _check(result.history)
    if out is not None:
        save_model(result.model, out)
    echo_json(
        DistillSummary(
            epochs=epochs,
            metric_name=result.logexp.metric_name,
            logexp=result.logexp.metric,
            maxmin_before=result.maxmin_before.metric,
            maxmin_after=result.maxmin_after.metric,
        )
    )


@click.command()
@click.option("--model", "model_path", type=ExistingPath, required=True)
@click.option("--data", type=ExistingPath, required=True)
@click.option("--region", default=None, help='Box "x0:lo:hi[,x1:lo:hi...]" in data units.')
@click.option("--auto", is_flag=True, help="Target the worst of 50 bins along x0.")
@click.option("--noise-scale", type=click.FloatRange(min=0), default=DEFAULT_NOISE_SCALE, show_default=True)
@click.option("--max-growth", type=click.FloatRange(min=1), default=None, help="Polytope cap as a multiple of the original count.")
@click.option("--out", type=PathType, default=None)
@click.option("--metrics-out", type=PathType, default=None, help="Before/after metrics CSV.")
@training_options(epochs=500)
@click.pass_context
def target(
    ctx, model_path, data, region: Optional[str], auto: bool, noise_scale: float,
    max_growth: Optional[float], out, metrics_out, epochs, lr, batch, seed, log_every,
):
    """Replicate the polytopes active in a poorly fitted region and fine-tune."""
    if (region is None) == (not auto):
        raise click.UsageError("give exactly one of --region or --auto")
    model = load_model(model_path)
    dataset = load_data(data, class_names=model_classes(model))
    config = build_train_config(ctx, epochs, lr, batch, seed, log_every)
    spec = RegionSpec(auto=True) if auto else RegionSpec.parse_box(region)

    result = targeted_learning(
        model, dataset, spec,
        noise_scale=noise_scale,
        finetune_config=config,
        seed=config.seed,
        max_growth_factor=max_growth,
    )
    _check(result.history)
    if out is not None:
        save_model(result.model, out)
    if metrics_out is not None:
        pd.DataFrame(
            {
                "scope": ["region", "off_region", "global"],
                "before": [result.region_before, result.off_region_before, result.global_before],
                "after": [result.region_after, result.off_region_after, result.global_after],
            }
        ).to_csv(metrics_out, index=False, float_format="%.17g")
    echo_json(
        TargetSummary(
            region_rows=int(result.region.size),
            replicated=result.replicated,
            polytopes=len(result.model.structure.polytopes),
            region_before=result.region_before,
            region_after=result.region_after,
            off_region_before=result.off_region_before,
            off_region_after=result.off_region_after,
            global_before=result.global_before,
            global_after=result.global_after,
        )
    )


@click.command("demo-maxmin-failure")
@click.option("--n", type=click.IntRange(min=2), default=1000, show_default=True)
@click.option("--unions", type=click.IntRange(min=1), default=25, show_default=True)
@click.option("--intersections", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--a", type=click.FloatRange(min=0, min_open=True), default=10.0, show_default=True)
@training_options()
@click.pass_context
def demo_maxmin_failure(ctx, n, unions, intersections, a, epochs, lr, batch, seed, log_every):
    """Train one structure in log-exp and in max-min form and count expressed components."""
    config = build_train_config(ctx, epochs, lr, batch, seed, log_every)
    dataset = gen_sim_regression(n=n, seed=config.seed)
    text = uniform_text(ComponentFamily.LINEAR, unions, intersections)

    smooth = build_from_text(text, input_dim=1, a=a, seed=config.seed, target_names=["y"])
    _check(fit(smooth, dataset, config))
    direct = train_maxmin_direct(smooth.structure, dataset, config, a=a)
    _check(direct.history)

    X = transform(smooth.x_scaler, dataset.features)
    echo_json(
        FailureDemoSummary(
            seed=config.seed,
            logexp_mse=evaluate(smooth, dataset).metric,
            maxmin_mse=evaluate(direct.model, dataset).metric,
            logexp_expressed=expressed_components(smooth, X),
            maxmin_expressed=direct.expressed,
            maxmin_ever_active=direct.ever_active,
        )
    )
