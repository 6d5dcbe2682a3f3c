"""
Post-training model surgery.

``distill_to_maxmin`` moves trained log-exp parameters into the max-min form
and fine-tunes them with subgradients. ``targeted_learning`` copies the
polytopes active in a badly fitted region, jitters the copies and fine-tunes
the grown model in log-exp form.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import structlog
from pydantic import BaseModel, Field, model_validator

from src.config import get_settings
from src.errors import GrowthLimitError, InputError
from src.models.model import SpineModel
from src.models.schemas import (
    ComponentFunction,
    EvaluationForm,
    SetStructure,
    TaskKind,
    TrainConfig,
    TrainingHistory,
)
from src.services.analysis import active_map
from src.services.datasets import Dataset
from src.services.preprocessing import transform
from src.services.trainer import EvaluationResult, evaluate, fit, init_params, predict_raw

logger = structlog.get_logger(__name__)

DEFAULT_FINETUNE_EPOCHS = 20
DEFAULT_NOISE_SCALE = 0.05
NOISE_FLOOR = 0.01
AUTO_REGION_BINS = 50


@dataclass
class DistillResult:
    model: SpineModel
    history: TrainingHistory
    logexp: EvaluationResult  # source model, log-exp form
    maxmin_before: EvaluationResult  # transplanted parameters, before fine-tuning
    maxmin_after: EvaluationResult


def distill_to_maxmin(
    model: SpineModel,
    dataset: Dataset,
    finetune_config: Optional[TrainConfig] = None,
    test: Optional[Dataset] = None,
) -> DistillResult:
    """
    Reuse ``model``'s θ in the max-min form and fine-tune it there.

    Metrics are reported on ``test`` when given, otherwise on ``dataset``.
    """
    config = finetune_config or TrainConfig(epochs=DEFAULT_FINETUNE_EPOCHS)
    config = config.model_copy(update={"form": EvaluationForm.MAXMIN, "a": None})
    scored = test if test is not None else dataset

    source = evaluate(model, scored, EvaluationForm.LOGEXP)
    distilled = model.copy()
    distilled.form = EvaluationForm.MAXMIN
    before = evaluate(distilled, scored, EvaluationForm.MAXMIN)

    history = fit(distilled, dataset, config)
    after = evaluate(distilled, scored, EvaluationForm.MAXMIN)
    logger.info(
        "model_distilled",
        epochs=config.epochs,
        metric_name=source.metric_name,
        logexp=source.metric,
        maxmin_before=before.metric,
        maxmin_after=after.metric,
    )
    return DistillResult(distilled, history, source, before, after)


@dataclass
class DirectResult:
    model: SpineModel
    history: TrainingHistory
    ever_active: int  # distinct components active at some epoch
    expressed: int  # distinct components active after training


def train_maxmin_direct(
    structure: SetStructure,
    dataset: Dataset,
    config: TrainConfig,
    a: float = 10.0,
) -> DirectResult:
    """Train the max-min form from a fresh initialisation, tracking which components ever win."""
    task = TaskKind.CLASSIFICATION if dataset.is_classification else TaskKind.REGRESSION
    model = SpineModel(
        structure=structure,
        theta=init_params(structure, seed=config.seed),
        a=a,
        task=task,
        form=EvaluationForm.MAXMIN,
        class_names=dataset.class_names,
        target_names=dataset.target_names or None,
    )
    config = config.model_copy(update={"form": EvaluationForm.MAXMIN})
    ever: set[int] = set()

    def census(epoch: int, current: SpineModel) -> None:
        _, components = active_map(current, transform(current.x_scaler, dataset.features))
        ever.update(np.unique(components).tolist())

    history = fit(model, dataset, config, on_epoch=census)
    X = transform(model.x_scaler, dataset.features)
    expressed = int(np.unique(active_map(model, X)[1]).size)
    logger.info("maxmin_direct_trained", ever_active=len(ever), expressed=expressed)
    return DirectResult(model, history, len(ever), expressed)


class RegionSpec(BaseModel):
    """
    Rows to target: an axis-aligned box in raw feature units, explicit row
    indices, or ``auto`` for the worst of 50 equal bins along feature 0.
    """
    box: Optional[list[tuple[int, float, float]]] = None
    indices: Optional[list[int]] = None
    auto: bool = False
    bins: int = Field(default=AUTO_REGION_BINS, ge=1)

    @model_validator(mode="after")
    def _one_mode(self) -> "RegionSpec":
        modes = sum([self.box is not None, self.indices is not None, self.auto])
        if modes != 1:
            raise ValueError("give exactly one of box, indices or auto")
        for dim, lo, hi in self.box or []:
            if dim < 0 or not lo <= hi:
                raise ValueError(f"bad box bound x{dim}:{lo}:{hi}")
        return self

    @classmethod
    def parse_box(cls, text: str) -> "RegionSpec":
        """``"x0:lo:hi[,x1:lo:hi...]"``"""
        bounds = []
        for part in text.split(","):
            pieces = part.strip().split(":")
            if len(pieces) != 3 or not pieces[0].startswith("x"):
                raise InputError(f"region bound {part!r} is not of the form x<dim>:<lo>:<hi>")
            try:
                bounds.append((int(pieces[0][1:]), float(pieces[1]), float(pieces[2])))
            except ValueError as exc:
                raise InputError(f"region bound {part!r} has a non-numeric field") from exc
        return cls(box=bounds)

    def select(self, model: SpineModel, dataset: Dataset) -> np.ndarray:
        n = len(dataset)
        if self.indices is not None:
            index = np.unique(np.asarray(self.indices, dtype=np.intp))
            if index.size and (index[0] < 0 or index[-1] >= n):
                raise InputError(f"region indices must lie in [0, {n})")
        elif self.box is not None:
            mask = np.ones(n, dtype=bool)
            for dim, lo, hi in self.box:
                if dim >= dataset.features.shape[1]:
                    raise InputError(f"region names x{dim} but data has {dataset.features.shape[1]} features")
                column = dataset.features[:, dim]
                mask &= (column >= lo) & (column <= hi)
            index = np.flatnonzero(mask)
        else:
            index = worst_region(model, dataset, self.bins)
        if index.size == 0:
            raise InputError("region selects no dataset rows")
        return index


def worst_region(model: SpineModel, dataset: Dataset, bins: int = AUTO_REGION_BINS) -> np.ndarray:
    """Rows of the equal-width bin (along feature 0) with the largest mean squared residual."""
    if dataset.is_classification:
        raise InputError("automatic regions need regression targets")
    residual = predict_raw(model, dataset.features) - dataset.targets
    errors = np.sum(residual * residual, axis=1)
    x = dataset.features[:, 0]
    edges = np.linspace(x.min(), x.max(), bins + 1)
    which = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, bins - 1)
    counts = np.bincount(which, minlength=bins)
    sums = np.bincount(which, weights=errors, minlength=bins)
    means = np.where(counts > 0, sums / np.maximum(counts, 1), -np.inf)
    worst = int(np.argmax(means))
    logger.info("worst_region_found", bin=worst, lo=float(edges[worst]), hi=float(edges[worst + 1]))
    return np.flatnonzero(which == worst)


def replicate_polytopes(
    model: SpineModel,
    polytopes: list[int],
    noise_scale: float = DEFAULT_NOISE_SCALE,
    seed: int = 0,
    max_growth_factor: Optional[float] = None,
) -> SpineModel:
    """
    Append a jittered copy of each listed polytope to every head that lists it.

    Copies get fresh parameter slices placed after the existing component
    parameters; existing components, slices and any pre-linear weights keep
    their values. Each copied parameter moves by U(-s, s) * (|param| + 0.01).
    """
    if noise_scale < 0:
        raise InputError("noise_scale must be non-negative")
    structure = model.structure
    d = structure.input_dim
    factor = max_growth_factor if max_growth_factor is not None else get_settings().max_growth_factor
    cap = int(factor * model.base_polytope_count)
    if len(structure.polytopes) + len(polytopes) > cap:
        raise GrowthLimitError(
            f"replicating {len(polytopes)} polytopes would exceed the cap of {cap}",
            cap=cap,
        )

    rng = np.random.default_rng(seed)
    components = list(structure.components)
    new_polytopes = [list(p) for p in structure.polytopes]
    heads = [list(h) for h in structure.heads]
    old_params = model.theta[:structure.num_component_params]
    blocks = [old_params]
    cursor = structure.num_component_params

    for source in polytopes:
        starts: dict[int, int] = {}
        members = []
        for c in structure.polytopes[source]:
            comp = components[c]
            if comp.param_start not in starts:
                starts[comp.param_start] = cursor
                params = model.theta[comp.param_slice(d)]
                jitter = rng.uniform(-noise_scale, noise_scale, size=params.size)
                blocks.append(params + jitter * (np.abs(params) + NOISE_FLOOR))
                cursor += params.size
            components.append(
                ComponentFunction(
                    family=comp.family,
                    param_start=starts[comp.param_start],
                    complemented=comp.complemented,
                )
            )
            members.append(len(components) - 1)
        new_polytopes.append(members)
        new_id = len(new_polytopes) - 1
        for head in heads:
            if source in head:
                head.append(new_id)

    if model.pre_linear is not None:
        blocks.append(model.theta[structure.num_component_params:])
    grown = SetStructure(
        input_dim=d,
        components=components,
        polytopes=new_polytopes,
        heads=heads,
        head_names=structure.head_names,
    )
    clone = model.copy()
    clone.structure = grown
    clone.theta = np.concatenate(blocks)
    clone._layout = None
    logger.info(
        "polytopes_replicated",
        sources=polytopes,
        polytopes=len(new_polytopes),
        params=clone.num_params,
        noise_scale=noise_scale,
    )
    return clone


@dataclass
class TargetResult:
    model: SpineModel
    history: TrainingHistory
    region: np.ndarray
    replicated: list[int]
    region_before: float
    region_after: float
    off_region_before: Optional[float]
    off_region_after: Optional[float]
    global_before: float
    global_after: float
    head_growth: list[int] = field(default_factory=list)


def targeted_learning(
    model: SpineModel,
    dataset: Dataset,
    region: RegionSpec,
    noise_scale: float = DEFAULT_NOISE_SCALE,
    finetune_config: Optional[TrainConfig] = None,
    seed: int = 0,
    max_growth_factor: Optional[float] = None,
) -> TargetResult:
    """
    Grow ``model`` where it fits worst and fine-tune it.

    The polytopes that are max-min active (for any head) on the region rows
    are replicated; the grown model is fine-tuned in log-exp form on the
    whole dataset. Metrics are z-score-scale MSE measured with the spread of
    the full dataset.
    """
    if dataset.is_classification:
        raise InputError("targeted learning works on regression data")
    config = finetune_config or TrainConfig(epochs=500)
    config = config.model_copy(update={"form": EvaluationForm.LOGEXP, "a": None})

    index = region.select(model, dataset)
    inside = dataset.subset(index, "region")
    rest = np.setdiff1d(np.arange(len(dataset)), index)
    outside = dataset.subset(rest, "off_region") if rest.size else None

    def measure(current: SpineModel) -> tuple[float, Optional[float], float]:
        inner = evaluate(current, inside, EvaluationForm.LOGEXP, scale_from=dataset).metric
        outer = (
            evaluate(current, outside, EvaluationForm.LOGEXP, scale_from=dataset).metric
            if outside is not None
            else None
        )
        return inner, outer, evaluate(current, dataset, EvaluationForm.LOGEXP).metric

    region_before, off_before, global_before = measure(model)
    polytopes, _ = active_map(model, transform(model.x_scaler, inside.features))
    replicated = sorted(np.unique(polytopes).tolist())
    old_sizes = [len(h) for h in model.structure.heads]

    grown = replicate_polytopes(model, replicated, noise_scale, seed, max_growth_factor)
    history = fit(grown, dataset, config)
    region_after, off_after, global_after = measure(grown)

    logger.info(
        "targeted_learning_finished",
        region_rows=int(index.size),
        replicated=len(replicated),
        region_before=region_before,
        region_after=region_after,
        global_before=global_before,
        global_after=global_after,
    )
    return TargetResult(
        model=grown,
        history=history,
        region=index,
        replicated=replicated,
        region_before=region_before,
        region_after=region_after,
        off_region_before=off_before,
        off_region_after=off_after,
        global_before=global_before,
        global_after=global_after,
        head_growth=[len(h) - n for h, n in zip(grown.structure.heads, old_sizes)],
    )
