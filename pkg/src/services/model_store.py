"""
JSON persistence of models and folding of the pre-linear layer.
"""
from pathlib import Path
from typing import Union

import numpy as np
import structlog
from pydantic import ValidationError

from src.errors import DataError, StructureError
from src.models.model import SpineModel
from src.models.schemas import ComponentFamily, ComponentFunction, ModelDocument, SetStructure

logger = structlog.get_logger(__name__)


def to_document(model: SpineModel) -> ModelDocument:
    return ModelDocument(
        task=model.task,
        form=model.form,
        structure=model.structure,
        structure_text=model.structure_text,
        a=model.a,
        theta=model.theta.tolist(),
        pre_linear=model.pre_linear,
        x_scaler=model.x_scaler,
        y_scaler=model.y_scaler,
        class_names=model.class_names,
        target_names=model.target_names,
        base_polytope_count=model.base_polytope_count,
    )


def from_document(document: ModelDocument) -> SpineModel:
    return SpineModel(
        structure=document.structure,
        theta=np.array(document.theta, dtype=np.float64),
        a=document.a,
        pre_linear=document.pre_linear,
        task=document.task,
        form=document.form,
        x_scaler=document.x_scaler,
        y_scaler=document.y_scaler,
        structure_text=document.structure_text,
        class_names=document.class_names,
        target_names=document.target_names,
        base_polytope_count=document.base_polytope_count,
    )


def save_model(model: SpineModel, path: Union[str, Path]) -> None:
    """Write ``model`` as one JSON document; floats keep round-trip precision."""
    path = Path(path)
    path.write_text(to_document(model).model_dump_json(indent=2))
    logger.info("model_saved", path=str(path), params=model.num_params)


def load_model(path: Union[str, Path]) -> SpineModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    try:
        document = ModelDocument.model_validate_json(path.read_text())
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "document"
        raise DataError(f"{path}: invalid model document at {location}: {first['msg']}") from exc
    model = from_document(document)
    logger.info("model_loaded", path=str(path), params=model.num_params, task=model.task.value)
    return model


def merge_pre_linear(model: SpineModel) -> SpineModel:
    """
    Fold the pre-linear layer into linear components.

    For ``z = x W + b`` feeding a component ``w·z + c`` the merged component
    is ``(W w)·x + (w·b + c)``. Aliased components stay aliased.
    """
    if model.pre_linear is None:
        return model.copy()
    structure = model.structure
    others = {c.family for c in structure.components} - {ComponentFamily.LINEAR}
    if others:
        names = ", ".join(sorted(f.value for f in others))
        raise StructureError(f"only linear components can absorb the pre-linear layer, found {names}")

    W_pre, b_pre = model.pre_linear_params()
    d_in, d_red = W_pre.shape
    arity = d_in + 1

    starts: dict[int, int] = {}
    for comp in structure.components:
        starts.setdefault(comp.param_start, len(starts) * arity)

    theta = np.empty(len(starts) * arity)
    for old_start, new_start in starts.items():
        w = model.theta[old_start:old_start + d_red]
        c = model.theta[old_start + d_red]
        theta[new_start:new_start + d_in] = W_pre @ w
        theta[new_start + d_in] = w @ b_pre + c

    merged = SetStructure(
        input_dim=d_in,
        components=[
            ComponentFunction(family=ComponentFamily.LINEAR, param_start=starts[c.param_start])
            for c in structure.components
        ],
        polytopes=structure.polytopes,
        heads=structure.heads,
        head_names=structure.head_names,
    )
    logger.info("pre_linear_merged", input_dim=d_in, reduced_dim=d_red, params=theta.size)
    return SpineModel(
        structure=merged,
        theta=theta,
        a=model.a,
        task=model.task,
        form=model.form,
        x_scaler=model.x_scaler,
        y_scaler=model.y_scaler,
        structure_text=model.structure_text,
        class_names=model.class_names,
        target_names=model.target_names,
        base_polytope_count=model.base_polytope_count,
    )
