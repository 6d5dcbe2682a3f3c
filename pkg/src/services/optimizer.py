"""Adam with bias correction over the flat parameter vector."""
from dataclasses import dataclass

import numpy as np
import structlog

from src.errors import NumericalError
from src.models.schemas import TrainConfig

logger = structlog.get_logger(__name__)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size))

    def copy(self) -> "AdamState":
        return AdamState(m=self.m.copy(), v=self.v.copy(), t=self.t)


@dataclass
class AdamHyper:
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def from_config(cls, config: TrainConfig) -> "AdamHyper":
        return cls(config.learning_rate, config.beta1, config.beta2, config.eps)


def adam_step(
    theta: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    config: TrainConfig | AdamHyper,
) -> tuple[np.ndarray, AdamState]:
    """One Adam update; returns new arrays and leaves the inputs untouched."""
    hyper = config if isinstance(config, AdamHyper) else AdamHyper.from_config(config)
    if grad.shape != theta.shape or state.m.shape != theta.shape:
        raise ValueError("theta, grad and optimizer state must be aligned")
    bad = ~np.isfinite(grad)
    if bad.any():
        index = int(np.argmax(bad))
        logger.error("non_finite_gradient_in_optimizer", index=index, step=state.t + 1)
        raise NumericalError(f"gradient entry {index} is not finite at step {state.t + 1}")

    t = state.t + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grad
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * (grad * grad)
    m_hat = m / (1.0 - hyper.beta1 ** t)
    v_hat = v / (1.0 - hyper.beta2 ** t)
    new_theta = theta - hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return new_theta, AdamState(m=m, v=v, t=t)
