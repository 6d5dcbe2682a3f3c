"""Scripted experiment runs: the noise study and (unions, intersections) sweeps."""
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
import pandas as pd
import structlog
from scipy.stats import spearmanr

from src.models.schemas import ComponentFamily, TaskKind, TrainConfig
from src.services.classifier import build_from_text
from src.services.datasets import Dataset, gen_sim_regression
from src.services.trainer import evaluate, fit

logger = structlog.get_logger(__name__)

NOISE_SCALES = tuple(round(0.1 * k, 1) for k in range(1, 10))
SPIRAL_UNIONS = (1, 2, 4, 8, 16, 32, 64)


def uniform_text(family: ComponentFamily, unions: int, intersections: int) -> str:
    return f"head = uniform({family.value}, {unions}, {intersections})"


@dataclass
class NoiseStudy:
    table: pd.DataFrame  # noise_scale, mse_noisy, mse_noiseless
    rho: float  # Spearman correlation of mse_noisy with noise_scale

    @property
    def monotone(self) -> bool:
        return bool(np.isclose(self.rho, 1.0))

    @property
    def noiseless_below_noisy(self) -> bool:
        return bool(np.all(self.table["mse_noiseless"] < self.table["mse_noisy"]))


def noise_study(
    noise_scales: Iterable[float] = NOISE_SCALES,
    structure_text: str = "head = uniform(lin, 25, 3)",
    config: Optional[TrainConfig] = None,
    n: int = 1000,
    seed: int = 0,
    a: float = 10.0,
) -> NoiseStudy:
    """
    Train one regressor per noise scale and score it against the noisy
    targets it saw and against the noiseless curve. Both columns share the
    z-score scale of the noiseless curve.
    """
    config = config or TrainConfig(seed=seed)
    clean = gen_sim_regression(n=n, noise_scale=0.0, seed=seed)
    rows = []
    for scale in noise_scales:
        noisy = gen_sim_regression(n=n, noise_scale=scale, seed=seed)
        model = build_from_text(structure_text, input_dim=1, a=a, seed=config.seed, target_names=["y"])
        fit(model, noisy, config)
        rows.append(
            {
                "noise_scale": scale,
                "mse_noisy": evaluate(model, noisy, scale_from=clean).metric,
                "mse_noiseless": evaluate(model, noisy, reference=clean, scale_from=clean).metric,
            }
        )
        logger.info("noise_setting_finished", **rows[-1])
    table = pd.DataFrame(rows)
    rho = float(spearmanr(table["noise_scale"], table["mse_noisy"]).statistic) if len(rows) > 1 else float("nan")
    return NoiseStudy(table=table, rho=rho)


def sweep_structures(
    train: Dataset,
    shapes: Iterable[tuple[int, int]],
    config: TrainConfig,
    family: ComponentFamily = ComponentFamily.LINEAR,
    a: float = 10.0,
    seeds: Iterable[int] = (0,),
    test: Optional[Dataset] = None,
) -> pd.DataFrame:
    """
    Train one model per (unions, intersections, seed) and tabulate the best
    training metric and the final train/test metrics.
    """
    task = TaskKind.CLASSIFICATION if train.is_classification else TaskKind.REGRESSION
    rows = []
    for unions, intersections in shapes:
        text = uniform_text(family, unions, intersections)
        for seed in seeds:
            model = build_from_text(
                text,
                input_dim=train.features.shape[1],
                task=task,
                class_names=train.class_names,
                target_names=train.target_names or None,
                a=a,
                seed=seed,
            )
            history = fit(model, train, config.model_copy(update={"seed": seed}))
            row = {
                "unions": unions,
                "intersections": intersections,
                "seed": seed,
                "diverged": history.diverged,
                "best_epoch": history.best_epoch,
                "best_metric": history.best_metric,
                "train_metric": evaluate(model, train).metric,
            }
            if test is not None:
                row["test_metric"] = evaluate(model, test, scale_from=train).metric
            rows.append(row)
            logger.info("sweep_point_finished", **row)
    return pd.DataFrame(rows)


def spiral_shapes(total: int = 64, unions: Iterable[int] = SPIRAL_UNIONS) -> list[tuple[int, int]]:
    """Shapes holding ``total`` components per class: (u, total / u)."""
    return [(u, total // u) for u in unions if total % u == 0]
