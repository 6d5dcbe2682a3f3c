"""
Closed-form gradients of both forms with respect to θ.

The log-exp form is one soft-max over soft-mins, so ∂y_h/∂f_j is a product
of two sets of convex weights: p over the polytopes of head h and q over
the components of the polytope holding j. The max-min form routes the whole
upstream value to the single active component per head.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import structlog

from src.errors import InputError, NumericalError
from src.models.model import SpineModel
from src.models.schemas import ComponentFamily, EvaluationForm, FiniteDifferenceReport
from src.services.evaluator import (
    ComponentPass,
    LogExpPass,
    MaxMinPass,
    forward_batch,
    get_layout,
    logexp_pass,
    maxmin_pass,
)

logger = structlog.get_logger(__name__)


@dataclass
class GradientBuffer:
    """Gradient aligned with ``model.theta``; the pre-linear block sits at the end."""
    dtheta: np.ndarray
    model: SpineModel

    def __add__(self, other: "GradientBuffer") -> "GradientBuffer":
        return GradientBuffer(self.dtheta + other.dtheta, self.model)

    def scaled(self, factor: float) -> "GradientBuffer":
        return GradientBuffer(self.dtheta * factor, self.model)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.dtheta))


def logexp_weights(model: SpineModel, forward: LogExpPass) -> tuple[np.ndarray, np.ndarray]:
    """
    Convex weights of the log-exp form.

    Returns ``p`` (N, total head members), the soft-max weights of each head
    member polytope, and ``q`` (N, C), the soft-min weights of each component
    (layout order) within its polytope.
    """
    layout = get_layout(model)
    a = model.a
    S = forward.polytope_values
    members = S[:, layout.head_members]
    p = np.exp(a * (members - forward.outputs[:, layout.member_head]))
    q = np.exp(-a * (forward.components.values - S[:, layout.comp_polytope]))
    return p, q


def component_sensitivities(
    model: SpineModel, forward: LogExpPass, upstream: np.ndarray
) -> np.ndarray:
    """∂L/∂f_j in layout order for upstream ∂L/∂y of shape (N, H)."""
    layout = get_layout(model)
    p, q = logexp_weights(model, forward)
    n_poly = layout.poly_sizes.size
    weighted = upstream[:, layout.member_head] * p
    # polytopes shared by several heads collect every head's contribution
    scatter = np.zeros((layout.head_members.size, n_poly))
    scatter[np.arange(layout.head_members.size), layout.head_members] = 1.0
    d_poly = weighted @ scatter
    return d_poly[:, layout.comp_polytope] * q


def _check_finite(model: SpineModel, dF: np.ndarray) -> None:
    bad = ~np.isfinite(dF)
    if bad.any():
        column = int(np.argmax(bad.any(axis=0)))
        component = int(get_layout(model).order[column])
        logger.error("non_finite_gradient", component=component)
        raise NumericalError(
            f"gradient through component {component} is not finite", component=component
        )


def chain_to_theta(model: SpineModel, comp: ComponentPass, dF: np.ndarray) -> GradientBuffer:
    """Map ∂L/∂f (N, C, layout order) onto θ, summing over the batch."""
    layout = get_layout(model)
    theta = model.theta
    X = comp.features
    n = theta.size
    dtheta = np.zeros(n)
    dX = np.zeros_like(X) if model.pre_linear is not None else None

    def scatter(idx: np.ndarray, values: np.ndarray) -> None:
        # bincount accumulates repeated indices, which aliased slices rely on
        dtheta[:] += np.bincount(idx.ravel(), weights=values.ravel(), minlength=n)

    for group in layout.groups:
        dFg = dF[:, group.positions]
        W = theta[group.w_idx]
        z = comp.pre_activation[group.family]

        if group.family is ComponentFamily.LINEAR:
            dz = dFg
        elif group.family is ComponentFamily.QUADRATIC:
            dz = dFg
            scatter(group.w_sq_idx, dFg.T @ (X * X))
            if dX is not None:
                dX += 2.0 * X * (dFg @ theta[group.w_sq_idx])
        elif group.family is ComponentFamily.SINUSOIDAL:
            amp = theta[group.amp_idx]
            dz = dFg * amp * np.cos(z)
            scatter(group.amp_idx, (dFg * np.sin(z)).sum(axis=0))
            scatter(group.off_idx, dFg.sum(axis=0))
        else:
            s = comp.values[:, group.positions]
            s = np.where(group.complemented, 1.0 - s, s)
            sign = np.where(group.complemented, -1.0, 1.0)
            dz = dFg * s * (1.0 - s) * sign

        scatter(group.w_idx, dz.T @ X)
        scatter(group.b_idx, dz.sum(axis=0))
        if dX is not None:
            dX += dz @ W

    if dX is not None:
        start = model.pre_linear_offset
        n_w = model.pre_linear.in_dim * model.pre_linear.out_dim
        dtheta[start:start + n_w] += (comp.inputs.T @ dX).ravel()
        dtheta[start + n_w:start + model.pre_linear.size] += dX.sum(axis=0)

    return GradientBuffer(dtheta, model)


def _upstream_batch(model: SpineModel, upstream: np.ndarray, n: int) -> np.ndarray:
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim == 1:
        upstream = upstream[None, :]
    if upstream.shape != (n, model.num_heads):
        raise InputError(
            f"upstream has shape {upstream.shape}, expected ({n}, {model.num_heads})"
        )
    return upstream


def backward_logexp_batch(
    model: SpineModel,
    X: np.ndarray,
    upstream: np.ndarray,
    forward: Optional[LogExpPass] = None,
) -> GradientBuffer:
    """Batch-summed gradient of Σ upstream·y for the log-exp form."""
    forward = forward or logexp_pass(model, X)
    upstream = _upstream_batch(model, upstream, forward.outputs.shape[0])
    dF = component_sensitivities(model, forward, upstream)
    _check_finite(model, dF)
    return chain_to_theta(model, forward.components, dF)


def backward_maxmin_batch(
    model: SpineModel,
    X: np.ndarray,
    upstream: np.ndarray,
    forward: Optional[MaxMinPass] = None,
) -> GradientBuffer:
    """Subgradient of the max-min form; only active components receive gradient."""
    forward = forward or maxmin_pass(model, X)
    n = forward.outputs.shape[0]
    upstream = _upstream_batch(model, upstream, n)
    layout = get_layout(model)
    dF = np.zeros_like(forward.components.values)
    rows = np.repeat(np.arange(n), model.num_heads)
    cols = layout.position[forward.active_component.ravel()]
    np.add.at(dF, (rows, cols), upstream.ravel())
    return chain_to_theta(model, forward.components, dF)


def backward_logexp(model: SpineModel, x: np.ndarray, upstream: np.ndarray) -> GradientBuffer:
    return backward_logexp_batch(model, x, upstream)


def backward_maxmin(model: SpineModel, x: np.ndarray, upstream: np.ndarray) -> GradientBuffer:
    return backward_maxmin_batch(model, x, upstream)


def backward(
    model: SpineModel, X: np.ndarray, upstream: np.ndarray, form: EvaluationForm
) -> GradientBuffer:
    if form is EvaluationForm.MAXMIN:
        return backward_maxmin_batch(model, X, upstream)
    return backward_logexp_batch(model, X, upstream)


def finite_difference_check(
    model: SpineModel,
    x: np.ndarray,
    eps: float = 1e-5,
    form: EvaluationForm = EvaluationForm.LOGEXP,
    upstream: Optional[np.ndarray] = None,
    abs_floor: float = 1e-9,
) -> FiniteDifferenceReport:
    """
    Compare analytic gradients with central differences on every parameter.

    The relative error of parameter k is |g - g_fd| / (|g| + 1e-8); pairs
    whose absolute difference is below ``abs_floor`` (round-off level for
    unit-scale outputs) count as exact.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise InputError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if upstream is None:
        upstream = np.ones((X.shape[0], model.num_heads))
    upstream = _upstream_batch(model, upstream, X.shape[0])

    analytic = backward(model, X, upstream, form).dtheta
    perturbed = model.copy()

    def objective() -> float:
        return float(np.sum(upstream * forward_batch(perturbed, X, form)))

    numeric = np.empty_like(analytic)
    for k in range(model.num_params):
        original = perturbed.theta[k]
        perturbed.theta[k] = original + eps
        plus = objective()
        perturbed.theta[k] = original - eps
        minus = objective()
        perturbed.theta[k] = original
        numeric[k] = (plus - minus) / (2 * eps)

    abs_err = np.abs(analytic - numeric)
    rel_err = np.where(abs_err < abs_floor, 0.0, abs_err / (np.abs(analytic) + 1e-8))
    worst = int(np.argmax(rel_err)) if rel_err.size else None
    return FiniteDifferenceReport(
        max_rel_error=float(rel_err.max()) if rel_err.size else 0.0,
        max_abs_error=float(abs_err.max()) if abs_err.size else 0.0,
        worst_index=worst,
        num_params=model.num_params,
        eps=eps,
    )
