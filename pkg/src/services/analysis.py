"""
Interpretability tools over a trained model.

All functions take inputs in model space, i.e. after the model's input
scaler. Saliency scores a component by the summed squared partials of the
output with respect to that component's parameters; perturbation profiles
measure where on the input axis each parameter moves the output.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
import structlog
from scipy.special import logsumexp
from scipy.stats import linregress

from src.errors import InputError
from src.models.model import SpineModel
from src.models.schemas import AnalysisReport, ComponentFamily, EvaluationForm
from src.services.evaluator import (
    as_batch,
    forward_batch,
    get_layout,
    logexp_pass,
    maxmin_pass,
)
from src.services.gradients import backward_logexp_batch

logger = structlog.get_logger(__name__)


def _component_index(model: SpineModel) -> list[np.ndarray]:
    return [model.component_param_indices(c) for c in range(len(model.structure.components))]


def _default_head(model: SpineModel, x: np.ndarray) -> int:
    if model.num_heads == 1:
        return 0
    return int(np.argmax(forward_batch(model, x)[0]))


def saliency(model: SpineModel, x: np.ndarray, head: Optional[int] = None) -> tuple[np.ndarray, int]:
    """
    Per-component saliency at ``x`` and the component that scores highest.

    ``head`` defaults to the only head, or the winning class for classifiers.
    """
    x = as_batch(model, x)
    if head is None:
        head = _default_head(model, x)
    if not 0 <= head < model.num_heads:
        raise InputError(f"head {head} out of range for {model.num_heads} heads")
    upstream = np.zeros((1, model.num_heads))
    upstream[0, head] = 1.0
    dtheta = backward_logexp_batch(model, x, upstream).dtheta
    squared = dtheta * dtheta
    scores = np.array([squared[idx].sum() for idx in _component_index(model)])
    return scores, int(np.argmax(scores))


def saliency_batch(
    model: SpineModel, X: np.ndarray, head: Optional[int] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``saliency``: scores (N, C) and argmax component (N,)."""
    X = as_batch(model, X)
    scores = np.empty((X.shape[0], len(model.structure.components)))
    for n in range(X.shape[0]):
        scores[n], _ = saliency(model, X[n], head)
    return scores, np.argmax(scores, axis=1)


def active_map(model: SpineModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max-min active polytope and component per input and head, each (N, H)."""
    result = maxmin_pass(model, X)
    return result.active_polytope, result.active_component


def expressed_components(model: SpineModel, X: np.ndarray) -> int:
    """Number of distinct components that are max-min active somewhere on ``X``."""
    _, components = active_map(model, X)
    return int(np.unique(components).size)


def profile_grid(
    model: SpineModel,
    lo: float,
    hi: float,
    n_bins: int = 500,
    slice_dim: int = 0,
    base_point: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Bin centres of ``n_bins`` equal parts of [lo, hi] along one input axis."""
    if not hi > lo:
        raise InputError(f"profile domain [{lo}, {hi}] has zero width")
    if n_bins < 1:
        raise InputError("n_bins must be positive")
    d = model.input_dim
    if not 0 <= slice_dim < d:
        raise InputError(f"slice dimension {slice_dim} out of range for {d} inputs")
    base = np.zeros(d) if base_point is None else np.asarray(base_point, dtype=np.float64)
    if base.shape != (d,):
        raise InputError(f"base point must have {d} entries")
    width = (hi - lo) / n_bins
    grid = np.tile(base, (n_bins, 1))
    grid[:, slice_dim] = lo + width * (np.arange(n_bins) + 0.5)
    return grid


def _profile_one(
    model: SpineModel,
    grid: np.ndarray,
    k: int,
    seed_seq: np.random.SeedSequence,
    n_draws: int,
    scale: tuple[float, float],
    head: int,
    form: EvaluationForm,
) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    perturbed = model.copy()
    original = perturbed.theta[k]
    outputs = np.empty((n_draws, grid.shape[0]))
    for draw, factor in enumerate(rng.uniform(scale[0], scale[1], size=n_draws)):
        perturbed.theta[k] = original * factor
        outputs[draw] = forward_batch(perturbed, grid, form)[:, head]
    return outputs.std(axis=0)


def perturbation_profile(
    model: SpineModel,
    lo: float,
    hi: float,
    n_bins: int = 500,
    n_draws: int = 64,
    scale: tuple[float, float] = (0.9, 1.1),
    seed: int = 0,
    slice_dim: int = 0,
    base_point: Optional[np.ndarray] = None,
    head: int = 0,
    form: EvaluationForm = EvaluationForm.LOGEXP,
    threads: int = 1,
) -> np.ndarray:
    """
    Per-parameter, per-bin standard deviation of the output under
    multiplicative perturbation of that parameter alone.

    Every parameter draws its factors from its own seeded stream, so the
    result does not depend on ``threads``.
    """
    if n_draws < 1:
        raise InputError("n_draws must be positive")
    if scale[0] > scale[1]:
        raise InputError(f"perturbation scale {scale} is reversed")
    grid = profile_grid(model, lo, hi, n_bins, slice_dim, base_point)
    streams = np.random.SeedSequence(seed).spawn(model.num_params)

    def job(k: int) -> np.ndarray:
        return _profile_one(model, grid, k, streams[k], n_draws, scale, head, form)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(job, range(model.num_params)))
    else:
        rows = [job(k) for k in range(model.num_params)]
    std = np.vstack(rows)
    logger.info(
        "perturbation_profile_computed",
        params=model.num_params,
        bins=n_bins,
        draws=n_draws,
        seed=seed,
    )
    return std


def locality_scores(
    model: SpineModel,
    std: np.ndarray,
    grid: np.ndarray,
    head: int = 0,
) -> np.ndarray:
    """
    Share of each parameter's std mass lying in bins where its component is
    max-min active for ``head``. NaN for parameters outside every component
    slice or with no std mass at all.
    """
    grid = as_batch(model, grid)
    if std.shape != (model.num_params, grid.shape[0]):
        raise InputError(f"std matrix has shape {std.shape}, expected ({model.num_params}, {grid.shape[0]})")
    _, active = active_map(model, grid)
    active = active[:, head]

    owners: dict[int, list[int]] = {}
    for c, idx in enumerate(_component_index(model)):
        for k in idx:
            owners.setdefault(int(k), []).append(c)

    shares = np.full(model.num_params, np.nan)
    for k, comps in owners.items():
        total = std[k].sum()
        if total <= 0:
            continue
        mask = np.isin(active, comps)
        shares[k] = std[k, mask].sum() / total
    return shares


@dataclass
class ComponentExport:
    curves: pd.DataFrame  # one row per grid point
    metadata: pd.DataFrame  # one row per component


def export_components(model: SpineModel, grid: np.ndarray) -> ComponentExport:
    """
    Sample every component, polytope soft-min and head output over ``grid``.

    Linear components also report their weights as slopes and their bias as
    the intercept.
    """
    grid = as_batch(model, grid)
    forward = logexp_pass(model, grid)
    layout = get_layout(model)
    structure = model.structure
    d = structure.input_dim

    columns = {f"x{j}": grid[:, j] for j in range(grid.shape[1])}
    values = forward.components.values[:, layout.position]
    for c in range(len(structure.components)):
        columns[f"c{c}"] = values[:, c]
    for p in range(len(structure.polytopes)):
        columns[f"p{p}"] = forward.polytope_values[:, p]
    for h in range(model.num_heads):
        columns[f"y{h}"] = forward.outputs[:, h]

    polytope_of = {c: p for p, members in enumerate(structure.polytopes) for c in members}
    heads_of: dict[int, list[int]] = {}
    for h, members in enumerate(structure.heads):
        for p in members:
            heads_of.setdefault(p, []).append(h)

    rows = []
    for c, comp in enumerate(structure.components):
        params = model.theta[comp.param_slice(d)]
        row = {
            "component": c,
            "family": comp.family.value,
            "complemented": comp.complemented,
            "polytope": polytope_of[c],
            "heads": " ".join(str(h) for h in heads_of[polytope_of[c]]),
            "param_start": comp.param_start,
            "params": " ".join(repr(float(v)) for v in params),
        }
        for j in range(d):
            row[f"slope_{j}"] = params[j] if comp.family is ComponentFamily.LINEAR else np.nan
        row["intercept"] = params[d] if comp.family is ComponentFamily.LINEAR else np.nan
        rows.append(row)

    return ComponentExport(curves=pd.DataFrame(columns), metadata=pd.DataFrame(rows))


def recompose(model: SpineModel, export: ComponentExport) -> np.ndarray:
    """Rebuild head outputs (N, H) from the exported component curves alone."""
    a = model.a
    values = export.curves[[f"c{c}" for c in range(len(model.structure.components))]].to_numpy()
    soft_min = np.column_stack(
        [-logsumexp(-a * values[:, members], axis=1) / a for members in model.structure.polytopes]
    )
    return np.column_stack(
        [logsumexp(a * soft_min[:, members], axis=1) / a for members in model.structure.heads]
    )


@dataclass
class LinearityReport:
    component: int
    points: int
    r_squared: float
    slope: float
    intercept: float


def linearity_check(
    model: SpineModel, X: np.ndarray, component: int, head: int = 0
) -> LinearityReport:
    """
    Regress the model output on one component's output, over the inputs
    where that component has the highest saliency.
    """
    X = as_batch(model, X)
    _, winners = saliency_batch(model, X, head)
    chosen = X[winners == component]
    if chosen.shape[0] < 3:
        raise InputError(f"component {component} wins saliency at {chosen.shape[0]} points, need 3")
    layout = get_layout(model)
    forward = logexp_pass(model, chosen)
    component_values = forward.components.values[:, layout.position[component]]
    if np.ptp(component_values) == 0:
        raise InputError(f"component {component} is constant over its saliency region")
    fit = linregress(component_values, forward.outputs[:, head])
    return LinearityReport(
        component=component,
        points=int(chosen.shape[0]),
        r_squared=float(fit.rvalue ** 2),
        slope=float(fit.slope),
        intercept=float(fit.intercept),
    )


def build_report(model: SpineModel, mode: str, num_inputs: int, **fields) -> AnalysisReport:
    return AnalysisReport(
        mode=mode,
        num_inputs=num_inputs,
        num_components=len(model.structure.components),
        num_params=model.num_params,
        **fields,
    )


def write_table(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    """CSV for ``.csv`` paths, otherwise whitespace-separated columns for gnuplot."""
    path = Path(path)
    if path.suffix == ".csv":
        frame.to_csv(path, index=False, float_format="%.17g")
        return
    with path.open("w") as handle:
        handle.write("# " + " ".join(str(c) for c in frame.columns) + "\n")
        frame.to_csv(handle, sep=" ", index=False, header=False, float_format="%.17g")


def std_frame(std: np.ndarray, grid: np.ndarray, slice_dim: int = 0) -> pd.DataFrame:
    """Long-to-wide std table: one row per bin, one column per parameter."""
    frame = pd.DataFrame(std.T, columns=[f"theta{k}" for k in range(std.shape[0])])
    frame.insert(0, "x", grid[:, slice_dim])
    return frame


def saliency_frame(scores: np.ndarray, winners: np.ndarray, X: np.ndarray) -> pd.DataFrame:
    frame = pd.DataFrame(scores, columns=[f"c{c}" for c in range(scores.shape[1])])
    for j in reversed(range(X.shape[1])):
        frame.insert(0, f"x{j}", X[:, j])
    frame["argmax"] = winners
    return frame


def active_frame(polytopes: np.ndarray, components: np.ndarray, X: np.ndarray) -> pd.DataFrame:
    frame = pd.DataFrame({f"x{j}": X[:, j] for j in range(X.shape[1])})
    for h in range(polytopes.shape[1]):
        frame[f"polytope_{h}"] = polytopes[:, h]
        frame[f"component_{h}"] = components[:, h]
    return frame


def summarize_locality(shares: np.ndarray, threshold: float = 0.8) -> float:
    """Fraction of parameters (with any std mass) whose local share reaches ``threshold``."""
    valid = shares[~np.isnan(shares)]
    return float(np.mean(valid >= threshold)) if valid.size else 0.0


def grid_from_range(model: SpineModel, ranges: Sequence[tuple[float, float]], points: int) -> np.ndarray:
    """Regular grid over a 1D or 2D input box, ``points`` per axis."""
    if len(ranges) != model.input_dim or model.input_dim > 2:
        raise InputError("component export grids cover 1D or 2D inputs")
    axes = [np.linspace(lo, hi, points) for lo, hi in ranges]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])
