import sys

import click

from src.cli.common import (
    ExistingPath,
    PathType,
    build_train_config,
    load_data,
    parse_floats,
    read_structure,
    training_options,
)
from src.cli.commands.train import split_for_test
from src.errors import InputError
from src.models.schemas import ComponentFamily
from src.services.experiments import NOISE_SCALES, noise_study, spiral_shapes, sweep_structures


def parse_shapes(text: str) -> list[tuple[int, int]]:
    """``"4x16,8x8"`` -> [(4, 16), (8, 8)]"""
    shapes = []
    for part in text.split(","):
        pieces = part.strip().lower().split("x")
        if len(pieces) != 2 or not all(p.isdigit() and int(p) > 0 for p in pieces):
            raise InputError(f"shape {part!r} is not of the form <unions>x<intersections>")
        shapes.append((int(pieces[0]), int(pieces[1])))
    return shapes


@click.command()
@click.option("--data", type=ExistingPath, required=True)
@click.option("--test-data", type=ExistingPath, default=None)
@click.option("--test-fraction", type=click.FloatRange(min=0, max=1, max_open=True), default=0.2, show_default=True)
@click.option("--shapes", default=None, help='Comma-separated "<u>x<i>" list.')
@click.option("--total", type=click.IntRange(min=1), default=64, show_default=True, help="Components per head when --shapes is omitted.")
@click.option("--family", type=click.Choice([f.value for f in ComponentFamily]), default="lin", show_default=True)
@click.option("--a", type=click.FloatRange(min=0, min_open=True), default=1.0, show_default=True)
@click.option("--seeds", default="0", show_default=True, help="Comma-separated seeds.")
@click.option("--out", type=PathType, default=None, help="CSV path; stdout when omitted.")
@training_options()
@click.pass_context
def sweep(ctx, data, test_data, test_fraction, shapes, total, family, a, seeds, out, epochs, lr, batch, seed, log_every):
    """Train every (unions, intersections) shape and tabulate the metrics."""
    config = build_train_config(ctx, epochs, lr, batch, seed, log_every)
    dataset = load_data(data)
    held_out = load_data(test_data, class_names=dataset.class_names) if test_data is not None else None
    train_set, test_set = split_for_test(dataset, held_out, test_fraction, config.seed)
    table = sweep_structures(
        train_set,
        parse_shapes(shapes) if shapes else spiral_shapes(total),
        config,
        family=ComponentFamily(family),
        a=a,
        seeds=[int(s) for s in parse_floats(seeds, "seeds")],
        test=test_set,
    )
    table.to_csv(out if out is not None else sys.stdout, index=False, float_format="%.17g")


@click.command("noise-study")
@click.option("--scales", default=",".join(str(s) for s in NOISE_SCALES), show_default=True)
@click.option("--structure", default="head = uniform(lin, 25, 3)", show_default=True)
@click.option("--n", type=click.IntRange(min=2), default=1000, show_default=True)
@click.option("--a", type=click.FloatRange(min=0, min_open=True), default=10.0, show_default=True)
@click.option("--out", type=PathType, default=None, help="CSV path; stdout when omitted.")
@training_options()
@click.pass_context
def noise_study_command(ctx, scales, structure, n, a, out, epochs, lr, batch, seed, log_every):
    """Error against noisy and noiseless targets across noise scales."""
    config = build_train_config(ctx, epochs, lr, batch, seed, log_every)
    study = noise_study(
        parse_floats(scales, "scales"),
        structure_text=read_structure(structure),
        config=config,
        n=n,
        seed=config.seed,
        a=a,
    )
    study.table.to_csv(out if out is not None else sys.stdout, index=False, float_format="%.17g")
    click.echo(f"spearman_rho={study.rho:.6g}", err=True)
