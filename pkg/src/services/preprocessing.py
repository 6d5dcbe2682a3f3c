"""Column scalers: z-score for inputs, unit min-max for log-exp regression targets."""
import numpy as np
import structlog

from src.errors import InputError
from src.models.schemas import Scaler, ScalerKind

logger = structlog.get_logger(__name__)

MNIST_MEAN = 0.1307
MNIST_SD = 0.3081


def fit_scaler(kind: ScalerKind, values: np.ndarray) -> Scaler:
    """
    Fit per-column statistics.

    Constant columns keep scale 1 so they are only shifted; this keeps every
    fitted scale strictly positive.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if kind is ScalerKind.IDENTITY:
        return Scaler(kind=kind)
    if values.shape[0] < 2:
        raise InputError("fitting a scaler needs at least two rows")

    if kind is ScalerKind.ZSCORE:
        shift = values.mean(axis=0)
        scale = values.std(axis=0)
    else:
        shift = values.min(axis=0)
        scale = values.max(axis=0) - shift

    constant = scale <= 0
    if constant.any():
        logger.debug("constant_columns_unscaled", count=int(constant.sum()))
        scale = np.where(constant, 1.0, scale)
    return Scaler(kind=kind, shift=shift.tolist(), scale=scale.tolist())


def mnist_scaler(num_columns: int) -> Scaler:
    """Fixed pixel normalisation (mean 0.1307, sd 0.3081) for every column."""
    return Scaler(
        kind=ScalerKind.ZSCORE,
        shift=[MNIST_MEAN] * num_columns,
        scale=[MNIST_SD] * num_columns,
    )


def _stats(scaler: Scaler, width: int) -> tuple[np.ndarray, np.ndarray]:
    if len(scaler.shift) != width:
        raise InputError(f"scaler was fitted on {len(scaler.shift)} columns, got {width}")
    return np.asarray(scaler.shift), np.asarray(scaler.scale)


def transform(scaler: Scaler | None, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if scaler is None or scaler.kind is ScalerKind.IDENTITY:
        return values
    shift, scale = _stats(scaler, values.shape[-1])
    return (values - shift) / scale


def inverse_transform(scaler: Scaler | None, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if scaler is None or scaler.kind is ScalerKind.IDENTITY:
        return values
    shift, scale = _stats(scaler, values.shape[-1])
    return values * scale + shift
