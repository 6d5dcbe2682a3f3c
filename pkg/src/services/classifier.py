"""
Model assembly for classifiers (and the text-driven builder shared with regression).

Every class owns one head; heads may list pool polytopes they share with
other classes. Class probabilities are the softmax of the head outputs and
the decision view comes from the max-min form on the same parameters.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import structlog

from src.errors import StructureError
from src.models.model import SpineModel
from src.models.schemas import (
    ClassifierSpec,
    PreLinear,
    TaskKind,
    TreeSpec,
)
from src.services.evaluator import forward_batch, maxmin_pass, softmax_head
from src.services.preprocessing import transform
from src.services.structure_parser import (
    StructureBuilder,
    StructureExpr,
    elaborate,
    expand_heads,
    parse,
    print_expr,
    tree_structure,
)
from src.services.trainer import init_params

logger = structlog.get_logger(__name__)


def _class_names(names: Optional[list[str]], count: int) -> list[str]:
    return list(names) if names else [str(c) for c in range(count)]


def build_classifier(spec: ClassifierSpec, seed: int = 0) -> SpineModel:
    """One head per class over the spec's polytope pool, freshly initialised."""
    width = spec.pre_linear_width
    builder = StructureBuilder(width or spec.input_dim)
    for size in spec.polytope_sizes:
        builder.add_polytope([(spec.family, False)] * size)
    names = _class_names(spec.class_names, spec.num_classes)
    for members, name in zip(spec.heads, names):
        builder.add_head(members, name=name)
    structure = builder.build()

    pre_linear = PreLinear(in_dim=spec.input_dim, out_dim=width) if width else None
    model = SpineModel(
        structure=structure,
        theta=init_params(structure, seed=seed, pre_linear=pre_linear),
        a=spec.a,
        pre_linear=pre_linear,
        task=TaskKind.CLASSIFICATION,
        class_names=names,
    )
    logger.info(
        "classifier_built",
        classes=spec.num_classes,
        polytopes=len(structure.polytopes),
        components=len(structure.components),
        shared=len(structure.shared_polytopes()),
    )
    return model


def build_tree_classifier(
    tree: TreeSpec,
    input_dim: int,
    a: float = 1.0,
    seed: int = 0,
    pre_linear_width: Optional[int] = None,
) -> SpineModel:
    """Soft decision tree: a polytope per root-to-leaf path, node parameters aliased."""
    structure = tree_structure(tree, pre_linear_width or input_dim)
    pre_linear = PreLinear(in_dim=input_dim, out_dim=pre_linear_width) if pre_linear_width else None
    return SpineModel(
        structure=structure,
        theta=init_params(structure, seed=seed, pre_linear=pre_linear),
        a=a,
        pre_linear=pre_linear,
        task=TaskKind.CLASSIFICATION,
        structure_text=print_expr(StructureExpr(tree=tree)),
        class_names=tree.classes(),
    )


def build_from_text(
    text: str,
    input_dim: int,
    task: TaskKind = TaskKind.REGRESSION,
    class_names: Optional[list[str]] = None,
    target_names: Optional[list[str]] = None,
    a: float = 10.0,
    seed: int = 0,
    pre_linear_width: Optional[int] = None,
) -> SpineModel:
    """
    Parse, elaborate and initialise a model from structure text.

    Classification texts with one unnamed head get that head once per class;
    tree texts define their own classes, which must match ``class_names``.
    """
    expr = parse(text)
    if task is TaskKind.CLASSIFICATION:
        if expr.tree is not None:
            tree_classes = expr.tree.classes()
            if class_names is not None and sorted(class_names) != tree_classes:
                raise StructureError(
                    f"tree leaves {tree_classes} do not match dataset classes {sorted(class_names)}"
                )
            class_names = tree_classes
        elif class_names is None:
            raise StructureError("classification structures need class names")
        else:
            expr = expand_heads(expr, class_names)
            if len(expr.heads) < 2:
                raise StructureError("a classifier needs at least two classes")

    structure = elaborate(expr, pre_linear_width or input_dim)
    pre_linear = PreLinear(in_dim=input_dim, out_dim=pre_linear_width) if pre_linear_width else None
    return SpineModel(
        structure=structure,
        theta=init_params(structure, seed=seed, pre_linear=pre_linear),
        a=a,
        pre_linear=pre_linear,
        task=task,
        structure_text=print_expr(expr),
        class_names=class_names if task is TaskKind.CLASSIFICATION else None,
        target_names=target_names,
    )


def build_mixed_regressor(n: int, input_dim: int = 1, a: float = 10.0, seed: int = 0) -> SpineModel:
    """Union of ``n`` polytopes, each a linear and a quadratic inequality."""
    if n < 1:
        raise StructureError("a mixed regressor needs at least one polytope")
    text = "head = " + " | ".join(["(lin & quad)"] * n)
    return build_from_text(text, input_dim, a=a, seed=seed)


@dataclass
class Prediction:
    probabilities: np.ndarray  # (N, K)
    labels: np.ndarray  # (N,)
    logits: np.ndarray  # (N, K)
    active_polytopes: np.ndarray  # (N, K), from the max-min form

    def class_names(self, model: SpineModel) -> list[str]:
        names = _class_names(model.class_names, self.logits.shape[1])
        return [names[i] for i in self.labels]


def predict_batch(model: SpineModel, features: np.ndarray) -> Prediction:
    """Predict raw (unscaled) feature rows; the model's input scaler is applied here."""
    X = transform(model.x_scaler, np.atleast_2d(features))
    logits = forward_batch(model, X)
    probabilities = softmax_head(logits)
    active = maxmin_pass(model, X).active_polytope
    return Prediction(
        probabilities=probabilities,
        labels=np.argmax(probabilities, axis=1),
        logits=logits,
        active_polytopes=active,
    )


def predict(model: SpineModel, x: np.ndarray) -> tuple[np.ndarray, int, np.ndarray, np.ndarray]:
    """(probabilities, predicted class, per-class logits, active polytope per class) for one input."""
    result = predict_batch(model, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return (
        result.probabilities[0],
        int(result.labels[0]),
        result.logits[0],
        result.active_polytopes[0],
    )


def equally_likely(model: SpineModel, features: np.ndarray) -> np.ndarray:
    """
    Flag inputs whose winning class is decided by a shared polytope.

    In that region the shared polytope supplies the same value to every
    class that lists it, so those classes are equally likely.
    """
    shared = np.array(model.structure.shared_polytopes(), dtype=np.intp)
    X = transform(model.x_scaler, np.atleast_2d(features))
    result = maxmin_pass(model, X)
    winner = np.argmax(result.outputs, axis=1)
    polytope = result.active_polytope[np.arange(X.shape[0]), winner]
    return np.isin(polytope, shared)

