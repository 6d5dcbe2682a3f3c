"""
Forward evaluators for the log-exp and max-min forms.

Components are reordered polytope-major once per structure so every
intersection and union becomes a segment reduction over contiguous columns.
Soft-min and soft-max are shifted by the true min/max of each segment, so no
exponent is ever positive and ``a * f`` can reach 1e4 without overflow.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import structlog
from scipy.special import expit, softmax

from src.errors import InputError, NumericalError, StructureError
from src.models.model import SpineModel
from src.models.schemas import ComponentFamily, EvaluationForm, SetStructure

logger = structlog.get_logger(__name__)


@dataclass
class FamilyGroup:
    """Index arrays gathering one family's parameters out of θ."""
    family: ComponentFamily
    positions: np.ndarray  # columns in layout order
    w_idx: np.ndarray  # (k, d) weight indices; quadratic: weights on x
    b_idx: np.ndarray  # (k,)
    w_sq_idx: Optional[np.ndarray] = None  # quadratic weights on x**2
    amp_idx: Optional[np.ndarray] = None  # sinusoidal A
    off_idx: Optional[np.ndarray] = None  # sinusoidal B
    complemented: Optional[np.ndarray] = None  # sigmoid flags


@dataclass
class EvaluationLayout:
    order: np.ndarray  # component index at each layout column
    position: np.ndarray  # layout column of each component
    poly_starts: np.ndarray
    poly_sizes: np.ndarray
    comp_polytope: np.ndarray  # polytope of each layout column
    head_members: np.ndarray  # polytope ids, head-major
    head_starts: np.ndarray
    head_sizes: np.ndarray
    member_head: np.ndarray
    groups: list[FamilyGroup] = field(default_factory=list)


def build_layout(structure: SetStructure) -> EvaluationLayout:
    d = structure.input_dim
    order = np.concatenate([np.asarray(p, dtype=np.intp) for p in structure.polytopes])
    position = np.empty_like(order)
    position[order] = np.arange(order.size)
    poly_sizes = np.array([len(p) for p in structure.polytopes], dtype=np.intp)
    poly_starts = np.concatenate(([0], np.cumsum(poly_sizes)[:-1])).astype(np.intp)

    head_sizes = np.array([len(h) for h in structure.heads], dtype=np.intp)
    head_members = np.concatenate([np.asarray(h, dtype=np.intp) for h in structure.heads])
    head_starts = np.concatenate(([0], np.cumsum(head_sizes)[:-1])).astype(np.intp)

    groups = []
    for family in ComponentFamily:
        cols = [col for col, c in enumerate(order) if structure.components[c].family is family]
        if not cols:
            continue
        starts = np.array(
            [structure.components[order[col]].param_start for col in cols], dtype=np.intp
        )
        span = np.arange(d, dtype=np.intp)
        group = FamilyGroup(
            family=family,
            positions=np.array(cols, dtype=np.intp),
            w_idx=starts[:, None] + span[None, :],
            b_idx=starts + d,
        )
        if family is ComponentFamily.QUADRATIC:
            group.w_sq_idx = group.w_idx
            group.w_idx = starts[:, None] + d + span[None, :]
            group.b_idx = starts + 2 * d
        elif family is ComponentFamily.SINUSOIDAL:
            group.amp_idx = starts + d + 1
            group.off_idx = starts + d + 2
        elif family is ComponentFamily.SIGMOID:
            group.complemented = np.array(
                [structure.components[order[col]].complemented for col in cols]
            )
        groups.append(group)

    return EvaluationLayout(
        order=order,
        position=position,
        poly_starts=poly_starts,
        poly_sizes=poly_sizes,
        comp_polytope=np.repeat(np.arange(poly_sizes.size), poly_sizes),
        head_members=head_members,
        head_starts=head_starts,
        head_sizes=head_sizes,
        member_head=np.repeat(np.arange(head_sizes.size), head_sizes),
        groups=groups,
    )


def get_layout(model: SpineModel) -> EvaluationLayout:
    """Layout cached on the model; rebuilt only when the structure object changes."""
    cached = model._layout
    if cached is None or cached[0] is not model.structure:
        model._layout = (model.structure, build_layout(model.structure))
    return model._layout[1]


@dataclass
class ComponentPass:
    """Component values for a batch plus what the backward pass needs."""
    inputs: np.ndarray  # raw model inputs (N, d_in)
    features: np.ndarray  # after the pre-linear layer (N, d)
    values: np.ndarray  # (N, C) in layout order
    pre_activation: dict = field(default_factory=dict)  # family -> z


@dataclass
class LogExpPass:
    components: ComponentPass
    polytope_values: np.ndarray  # soft-min per polytope (N, P)
    outputs: np.ndarray  # (N, H)


@dataclass
class MaxMinPass:
    components: ComponentPass
    polytope_values: np.ndarray  # min per polytope (N, P)
    outputs: np.ndarray  # (N, H)
    active_polytope: np.ndarray  # (N, H)
    active_component: np.ndarray  # (N, H), original component indices


def as_batch(model: SpineModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise StructureError(
            f"input has shape {X.shape}, model expects {model.input_dim} features"
        )
    if not np.all(np.isfinite(X)):
        raise InputError("input contains non-finite values")
    return X


def compute_components(model: SpineModel, X: np.ndarray) -> ComponentPass:
    X_in = as_batch(model, X)
    theta = model.theta
    layout = get_layout(model)

    if model.pre_linear is not None:
        W_pre, b_pre = model.pre_linear_params()
        features = X_in @ W_pre + b_pre
    else:
        features = X_in

    values = np.empty((features.shape[0], layout.order.size))
    pre_activation = {}
    for group in layout.groups:
        W = theta[group.w_idx]
        z = features @ W.T + theta[group.b_idx]
        if group.family is ComponentFamily.LINEAR:
            f = z
        elif group.family is ComponentFamily.QUADRATIC:
            f = z + (features * features) @ theta[group.w_sq_idx].T
        elif group.family is ComponentFamily.SINUSOIDAL:
            f = theta[group.amp_idx] * np.sin(z) + theta[group.off_idx]
        else:
            s = expit(z)
            f = np.where(group.complemented, 1.0 - s, s)
        pre_activation[group.family] = z
        values[:, group.positions] = f

    return ComponentPass(inputs=X_in, features=features, values=values, pre_activation=pre_activation)


def check_finite_components(model: SpineModel, values: np.ndarray) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        column = int(np.argmax(bad.any(axis=0)))
        component = int(get_layout(model).order[column])
        logger.error("non_finite_component", component=component)
        raise NumericalError(f"component {component} evaluated to a non-finite value", component=component)


def segment_softmin(values: np.ndarray, starts: np.ndarray, sizes: np.ndarray, a: float) -> np.ndarray:
    """-(1/a) log Σ exp(-a f) per segment, shifted by the segment minimum."""
    lo = np.minimum.reduceat(values, starts, axis=1)
    total = np.add.reduceat(np.exp(-a * (values - np.repeat(lo, sizes, axis=1))), starts, axis=1)
    return lo - np.log(total) / a


def segment_softmax(values: np.ndarray, starts: np.ndarray, sizes: np.ndarray, a: float) -> np.ndarray:
    """(1/a) log Σ exp(a f) per segment, shifted by the segment maximum."""
    hi = np.maximum.reduceat(values, starts, axis=1)
    total = np.add.reduceat(np.exp(a * (values - np.repeat(hi, sizes, axis=1))), starts, axis=1)
    return hi + np.log(total) / a


def logexp_pass(model: SpineModel, X: np.ndarray) -> LogExpPass:
    comp = compute_components(model, X)
    check_finite_components(model, comp.values)
    layout = get_layout(model)
    S = segment_softmin(comp.values, layout.poly_starts, layout.poly_sizes, model.a)
    Y = segment_softmax(S[:, layout.head_members], layout.head_starts, layout.head_sizes, model.a)
    model.evaluation_counter["softmin"] += S.size
    return LogExpPass(components=comp, polytope_values=S, outputs=Y)


def maxmin_pass(model: SpineModel, X: np.ndarray) -> MaxMinPass:
    comp = compute_components(model, X)
    check_finite_components(model, comp.values)
    layout = get_layout(model)
    F = comp.values
    n_comp = layout.order.size
    n_poly = layout.poly_sizes.size

    lo = np.minimum.reduceat(F, layout.poly_starts, axis=1)
    # ties resolve to the lowest component index
    tied = F == np.repeat(lo, layout.poly_sizes, axis=1)
    candidates = np.where(tied, layout.order[None, :], n_comp)
    argmin_comp = np.minimum.reduceat(candidates, layout.poly_starts, axis=1)

    G = lo[:, layout.head_members]
    hi = np.maximum.reduceat(G, layout.head_starts, axis=1)
    tied = G == np.repeat(hi, layout.head_sizes, axis=1)
    candidates = np.where(tied, layout.head_members[None, :], n_poly)
    argmax_poly = np.minimum.reduceat(candidates, layout.head_starts, axis=1)
    active_comp = np.take_along_axis(argmin_comp, argmax_poly, axis=1)

    model.evaluation_counter["min"] += lo.size
    return MaxMinPass(
        components=comp,
        polytope_values=lo,
        outputs=hi,
        active_polytope=argmax_poly,
        active_component=active_comp,
    )


def eval_components(model: SpineModel, x: np.ndarray) -> np.ndarray:
    """Value of every component at ``x``, indexed by component id."""
    comp = compute_components(model, x)
    layout = get_layout(model)
    return comp.values[0, layout.position]


def forward_logexp(model: SpineModel, x: np.ndarray) -> np.ndarray:
    """Head outputs of the log-exp form at a single input."""
    return logexp_pass(model, x).outputs[0]


def forward_logexp_batch(model: SpineModel, X: np.ndarray) -> np.ndarray:
    return logexp_pass(model, X).outputs


def forward_maxmin(model: SpineModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Head outputs of the max-min form plus the active polytope and component per head."""
    result = maxmin_pass(model, x)
    return result.outputs[0], result.active_polytope[0], result.active_component[0]


def forward_maxmin_batch(model: SpineModel, X: np.ndarray) -> np.ndarray:
    return maxmin_pass(model, X).outputs


def forward_batch(model: SpineModel, X: np.ndarray, form=None) -> np.ndarray:
    """Evaluate in ``form`` (the model's own form by default)."""
    form = form or model.form
    if form is EvaluationForm.MAXMIN:
        return forward_maxmin_batch(model, X)
    return forward_logexp_batch(model, X)


def naive_logexp(model: SpineModel, x: np.ndarray) -> np.ndarray:
    """
    Literal ln(Σ_i 1/Σ_j exp(-a f_ij)) / a in extended precision.

    Only meaningful where no exponent overflows; used as a reference for
    the shifted evaluator.
    """
    f = eval_components(model, x).astype(np.longdouble)
    a = np.longdouble(model.a)
    inverse_sums = [
        1 / np.sum(np.exp(-a * f[np.asarray(members)])) for members in model.structure.polytopes
    ]
    return np.array(
        [np.log(np.sum([inverse_sums[p] for p in head])) / a for head in model.structure.heads],
        dtype=np.longdouble,
    )


def softmax_head(logits: np.ndarray) -> np.ndarray:
    """Class probabilities from head outputs (shift-stable softmax over the last axis)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise InputError("logits must be finite")
    return softmax(logits, axis=-1)
