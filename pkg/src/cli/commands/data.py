import sys
from pathlib import Path
from typing import Optional

import click

from src.cli.common import PathType
from src.services.datasets import gen_sim_regression, gen_spiral, gen_xor, save_csv

GENERATORS = ("sim-reg", "spiral", "xor")


@click.command()
@click.argument("kind", type=click.Choice(GENERATORS))
@click.option("--n", type=click.IntRange(min=2), default=None, help="Rows (per class for spiral).")
@click.option("--noise", type=click.FloatRange(min=0), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=PathType, default=None, help="CSV path; stdout when omitted.")
@click.pass_context
def gen(ctx: click.Context, kind: str, n: Optional[int], noise: Optional[float], seed: Optional[int], out: Optional[Path]):
    """Generate a simulated dataset as CSV."""
    seed = ctx.obj.settings.default_seed if seed is None else seed
    if kind == "sim-reg":
        dataset = gen_sim_regression(n=n or 1000, noise_scale=0.1 if noise is None else noise, seed=seed)
    elif kind == "spiral":
        dataset = gen_spiral(n_per_class=n or 10000, noise=0.05 if noise is None else noise, seed=seed)
    else:
        dataset = gen_xor(n=n or 1000, noise=noise or 0.0, seed=seed)
    save_csv(dataset, out if out is not None else sys.stdout)
