"""
Parameter initialisation, losses and the batched training loop.

Regression trains with MSE on unit min-max scaled targets; classification
trains with negative log likelihood over the softmax of the head outputs.
Both forms share the loop and differ only in which backward pass they call.
"""
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import pandas as pd
import structlog

from src.errors import InputError, NumericalError
from src.models.model import SpineModel
from src.models.schemas import (
    ComponentFamily,
    EpochRecord,
    EvaluationForm,
    InitScheme,
    LossKind,
    PreLinear,
    ScalerKind,
    SetStructure,
    TaskKind,
    TrainConfig,
    TrainingHistory,
)
from src.services.datasets import Dataset
from src.services.evaluator import forward_batch, logexp_pass, maxmin_pass, softmax_head
from src.services.gradients import (
    GradientBuffer,
    backward_logexp_batch,
    backward_maxmin_batch,
)
from src.services.optimizer import AdamState, adam_step
from src.services.preprocessing import fit_scaler, inverse_transform, transform

logger = structlog.get_logger(__name__)

EpochCallback = Callable[[int, SpineModel], None]


def init_params(
    structure: SetStructure,
    seed: int = 0,
    scheme: InitScheme = InitScheme.UNIFORM,
    pre_linear: Optional[PreLinear] = None,
) -> np.ndarray:
    """
    Draw θ for ``structure``.

    Weights and biases are Uniform(-1/√d, 1/√d) (or Normal with that
    standard deviation); sinusoidal amplitude and offset are standard normal.
    """
    rng = np.random.default_rng(seed)
    d = structure.input_dim
    bound = 1.0 / math.sqrt(d)

    def draw(size: int, fan_in: int = d) -> np.ndarray:
        limit = 1.0 / math.sqrt(fan_in)
        if scheme is InitScheme.NORMAL:
            return rng.normal(0.0, limit, size=size)
        return rng.uniform(-limit, limit, size=size)

    theta = np.zeros(structure.num_component_params + (pre_linear.size if pre_linear else 0))
    seen = set()
    for comp in structure.components:
        if comp.param_start in seen:
            continue
        seen.add(comp.param_start)
        span = comp.param_slice(d)
        theta[span] = draw(span.stop - span.start)
        if comp.family is ComponentFamily.SINUSOIDAL:
            theta[span.stop - 2:span.stop] = rng.normal(0.0, 1.0, size=2)
    if pre_linear is not None:
        start = structure.num_component_params
        theta[start:] = draw(pre_linear.size, fan_in=pre_linear.in_dim)
    logger.debug("params_initialised", size=theta.size, seed=seed, scheme=scheme.value, bound=bound)
    return theta


def loss_mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over the batch of the summed squared error, and its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InputError(f"prediction shape {pred.shape} does not match target {target.shape}")
    n = pred.shape[0]
    residual = pred - target
    return float(np.sum(residual * residual) / n), 2.0 * residual / n


def loss_nll(probabilities: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Mean negative log likelihood of ``labels``.

    The returned gradient is taken with respect to the logits that produced
    ``probabilities`` through softmax: (p - onehot) / n.
    """
    probabilities = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    n, k = probabilities.shape
    if labels.shape != (n,):
        raise InputError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise InputError(f"labels must lie in [0, {k})")
    rows = np.arange(n)
    picked = np.clip(probabilities[rows, labels], np.finfo(np.float64).tiny, None)
    upstream = probabilities.copy()
    upstream[rows, labels] -= 1.0
    return float(-np.mean(np.log(picked))), upstream / n


def resolve_loss(model: SpineModel, config: TrainConfig) -> LossKind:
    if config.loss is not None:
        return config.loss
    return LossKind.NLL if model.task is TaskKind.CLASSIFICATION else LossKind.MSE


def fit_model_scalers(model: SpineModel, dataset: Dataset, config: TrainConfig) -> None:
    """Fit whichever of the model's scalers are still unset, on ``dataset`` only."""
    if model.x_scaler is None:
        model.x_scaler = fit_scaler(config.x_scaling, dataset.features)
    if model.y_scaler is None:
        if dataset.is_classification:
            model.y_scaler = fit_scaler(ScalerKind.IDENTITY, dataset.features[:, :1])
        else:
            kind = config.y_scaling or ScalerKind.MINMAX_UNIT
            model.y_scaler = fit_scaler(kind, dataset.targets)


def zscore_factors(dataset: Dataset, model: SpineModel) -> np.ndarray:
    """Per-target factor turning residuals in model scale into z-score scale."""
    if model.y_scaler is None or not model.y_scaler.scale:
        scale = np.ones(dataset.targets.shape[1])
    else:
        scale = np.asarray(model.y_scaler.scale)
    sd = dataset.targets.std(axis=0)
    return scale / np.where(sd > 0, sd, 1.0)


@dataclass
class BatchResult:
    loss: float
    metric: float
    gradient: GradientBuffer


def _chunk_objective(
    model: SpineModel,
    X: np.ndarray,
    target: np.ndarray,
    weight: float,
    loss_kind: LossKind,
    form: EvaluationForm,
    factors: Optional[np.ndarray],
) -> BatchResult:
    """Loss, metric and gradient of one chunk, weighted by its share of the batch."""
    forward = maxmin_pass(model, X) if form is EvaluationForm.MAXMIN else logexp_pass(model, X)
    outputs = forward.outputs
    if loss_kind is LossKind.NLL:
        probabilities = softmax_head(outputs)
        loss, upstream = loss_nll(probabilities, target)
        metric = float(np.mean(np.argmax(outputs, axis=1) == target))
    else:
        loss, upstream = loss_mse(outputs, target)
        residual = (outputs - target) * (factors if factors is not None else 1.0)
        metric = float(np.sum(residual * residual) / X.shape[0])

    upstream = upstream * weight
    if form is EvaluationForm.MAXMIN:
        gradient = backward_maxmin_batch(model, X, upstream, forward=forward)
    else:
        gradient = backward_logexp_batch(model, X, upstream, forward=forward)
    return BatchResult(loss * weight, metric * weight, gradient)


class Trainer:
    """Runs the epoch/batch loop for one model under one config."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self._pool: Optional[ThreadPoolExecutor] = None

    def _batch(
        self,
        model: SpineModel,
        X: np.ndarray,
        target: np.ndarray,
        loss_kind: LossKind,
        factors: Optional[np.ndarray],
    ) -> BatchResult:
        n = X.shape[0]
        threads = min(self.config.threads, n)
        if threads <= 1:
            return _chunk_objective(model, X, target, 1.0, loss_kind, self.config.form, factors)

        bounds = np.linspace(0, n, threads + 1).astype(int)
        jobs = [
            self._pool.submit(
                _chunk_objective,
                model,
                X[lo:hi],
                target[lo:hi],
                (hi - lo) / n,
                loss_kind,
                self.config.form,
                factors,
            )
            for lo, hi in zip(bounds[:-1], bounds[1:])
        ]
        # sum in chunk order so the result does not depend on completion order
        parts = [job.result() for job in jobs]
        total = parts[0]
        for part in parts[1:]:
            total = BatchResult(
                total.loss + part.loss, total.metric + part.metric, total.gradient + part.gradient
            )
        return total

    def fit(
        self,
        model: SpineModel,
        dataset: Dataset,
        on_epoch: Optional[EpochCallback] = None,
    ) -> TrainingHistory:
        config = self.config
        loss_kind = resolve_loss(model, config)
        history = TrainingHistory(
            metric_name="accuracy" if loss_kind is LossKind.NLL else "mse",
        )
        if config.epochs == 0:
            return history

        if config.a is not None:
            model.a = config.a
        fit_model_scalers(model, dataset, config)
        X = transform(model.x_scaler, dataset.features)
        if loss_kind is LossKind.NLL:
            if not dataset.is_classification:
                raise InputError("negative log likelihood needs class labels")
            if dataset.num_classes != model.num_heads:
                raise InputError(
                    f"dataset has {dataset.num_classes} classes, model has {model.num_heads} heads"
                )
            target = dataset.labels
            factors = None
        else:
            if dataset.is_classification:
                raise InputError("mean squared error needs regression targets")
            target = transform(model.y_scaler, dataset.targets)
            if target.shape[1] != model.num_heads:
                raise InputError(
                    f"dataset has {target.shape[1]} targets, model has {model.num_heads} heads"
                )
            factors = zscore_factors(dataset, model)

        n = X.shape[0]
        batch_size = n if config.batch_size == 0 else min(config.batch_size, n)
        rng = np.random.default_rng(config.seed)
        state = AdamState.zeros(model.num_params)
        started = time.perf_counter()

        logger.info(
            "training_started",
            examples=n,
            params=model.num_params,
            epochs=config.epochs,
            batch_size=batch_size,
            form=config.form.value,
            loss=loss_kind.value,
            a=model.a,
        )

        if config.threads > 1:
            self._pool = ThreadPoolExecutor(max_workers=config.threads)
        try:
            for epoch in range(1, config.epochs + 1):
                order = rng.permutation(n) if batch_size < n else np.arange(n)
                loss_sum = metric_sum = 0.0
                clipped = 0
                for lo in range(0, n, batch_size):
                    index = order[lo:lo + batch_size]
                    try:
                        result = self._batch(model, X[index], target[index], loss_kind, factors)
                        share = index.size / n
                        loss_sum += result.loss * share
                        metric_sum += result.metric * share
                        if not math.isfinite(result.loss):
                            break

                        gradient = result.gradient
                        norm = gradient.norm
                        if norm > config.grad_clip:
                            gradient = gradient.scaled(config.grad_clip / norm)
                            clipped += 1
                        model.theta, state = adam_step(model.theta, gradient.dtheta, state, config)
                    except NumericalError as exc:
                        logger.warning("non_finite_batch", epoch=epoch, error=exc.message)
                        loss_sum = math.nan
                        break

                if not math.isfinite(loss_sum):
                    history.diverged = True
                    logger.error("training_diverged", epoch=epoch, loss=loss_sum)
                    break

                history.append(EpochRecord(epoch=epoch, loss=loss_sum, metric=metric_sum))
                if clipped:
                    history.clip_events += clipped
                    logger.warning("gradient_clipped", epoch=epoch, batches=clipped, limit=config.grad_clip)
                if epoch % config.log_every == 0 or epoch == config.epochs:
                    logger.info(
                        "epoch_completed",
                        epoch=epoch,
                        loss=loss_sum,
                        metric=metric_sum,
                        metric_name=history.metric_name,
                    )
                if on_epoch is not None:
                    on_epoch(epoch, model)
        finally:
            if self._pool is not None:
                self._pool.shutdown()
                self._pool = None

        logger.info(
            "training_finished",
            epochs_run=len(history.records),
            best_epoch=history.best_epoch,
            best_loss=history.best_loss,
            diverged=history.diverged,
            seconds=round(time.perf_counter() - started, 3),
        )
        return history


def fit(
    model: SpineModel,
    dataset: Dataset,
    config: TrainConfig,
    on_epoch: Optional[EpochCallback] = None,
) -> TrainingHistory:
    """Train ``model`` in place; returns the per-epoch history."""
    return Trainer(config).fit(model, dataset, on_epoch=on_epoch)


@dataclass
class EvaluationResult:
    loss: float
    metric: float
    metric_name: str
    examples: int


def predict_raw(model: SpineModel, features: np.ndarray, form: Optional[EvaluationForm] = None) -> np.ndarray:
    """Head outputs for raw features; regression outputs are mapped back to target units."""
    outputs = forward_batch(model, transform(model.x_scaler, features), form)
    if model.task is TaskKind.REGRESSION:
        return inverse_transform(model.y_scaler, outputs)
    return outputs


def evaluate(
    model: SpineModel,
    dataset: Dataset,
    form: Optional[EvaluationForm] = None,
    reference: Optional[Dataset] = None,
    scale_from: Optional[Dataset] = None,
) -> EvaluationResult:
    """
    Loss and metric of ``model`` on ``dataset``.

    Regression loss is the MSE in the model's target scale and the metric is
    the same error on the z-score target scale. ``reference`` replaces the
    targets (e.g. the noiseless curve) while keeping the inputs, and
    ``scale_from`` supplies the target spread of the z-score scale (the
    evaluated rows themselves by default).
    """
    X = transform(model.x_scaler, dataset.features)
    outputs = forward_batch(model, X, form)
    if dataset.is_classification:
        loss, _ = loss_nll(softmax_head(outputs), dataset.labels)
        accuracy = float(np.mean(np.argmax(outputs, axis=1) == dataset.labels))
        return EvaluationResult(loss, accuracy, "accuracy", len(dataset))

    truth = reference if reference is not None else dataset
    if len(truth) != len(dataset):
        raise InputError("reference dataset must align row for row")
    target = transform(model.y_scaler, truth.targets)
    loss, _ = loss_mse(outputs, target)
    residual = (outputs - target) * zscore_factors(scale_from if scale_from is not None else dataset, model)
    metric = float(np.sum(residual * residual) / len(dataset))
    return EvaluationResult(loss, metric, "mse", len(dataset))


def history_frame(history: TrainingHistory) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.epoch, r.loss, r.metric) for r in history.records],
        columns=["epoch", "loss", "metric"],
    )


def write_history(history: TrainingHistory, path) -> None:
    history_frame(history).to_csv(path, index=False, float_format="%.17g")
