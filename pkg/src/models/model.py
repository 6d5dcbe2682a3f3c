from collections import Counter
from typing import Optional

import numpy as np

from src.errors import StructureError
from src.models.schemas import (
    EvaluationForm,
    PreLinear,
    Scaler,
    SetStructure,
    TaskKind,
)


class SpineModel:
    """
    A set structure plus its flat parameter vector θ and sharpness ``a``.

    Component parameters occupy the front of θ; the optional pre-linear
    layer (row-major ``W`` of shape ``in_dim x out_dim`` followed by ``b``)
    sits at the end. Evaluation never mutates the model, so concurrent
    readers are safe as long as no update runs at the same time.
    """

    def __init__(
        self,
        structure: SetStructure,
        theta: np.ndarray,
        a: float,
        pre_linear: Optional[PreLinear] = None,
        task: TaskKind = TaskKind.REGRESSION,
        form: EvaluationForm = EvaluationForm.LOGEXP,
        x_scaler: Optional[Scaler] = None,
        y_scaler: Optional[Scaler] = None,
        structure_text: Optional[str] = None,
        class_names: Optional[list[str]] = None,
        target_names: Optional[list[str]] = None,
        base_polytope_count: Optional[int] = None,
    ):
        theta = np.array(theta, dtype=np.float64)
        if theta.ndim != 1:
            raise StructureError("theta must be a flat vector")
        if not (np.isfinite(a) and a > 0):
            raise StructureError(f"sharpness a must be positive and finite, got {a}")
        if pre_linear is not None and pre_linear.out_dim != structure.input_dim:
            raise StructureError(
                f"pre-linear output width {pre_linear.out_dim} does not match "
                f"component input dimension {structure.input_dim}"
            )

        expected = structure.num_component_params + (pre_linear.size if pre_linear else 0)
        if theta.size != expected:
            raise StructureError(f"theta has {theta.size} entries, structure needs {expected}")

        self.structure = structure
        self.theta = theta
        self.a = float(a)
        self.pre_linear = pre_linear
        self.task = task
        self.form = form
        self.x_scaler = x_scaler
        self.y_scaler = y_scaler
        self.structure_text = structure_text
        self.class_names = class_names
        self.target_names = target_names
        self.base_polytope_count = base_polytope_count or len(structure.polytopes)

        # soft-min / min evaluations per polytope, bumped by the evaluators
        self.evaluation_counter: Counter = Counter()
        self._layout = None

    @property
    def input_dim(self) -> int:
        """Dimension of raw model inputs (before any pre-linear layer)."""
        return self.pre_linear.in_dim if self.pre_linear else self.structure.input_dim

    @property
    def num_heads(self) -> int:
        return len(self.structure.heads)

    @property
    def num_params(self) -> int:
        return self.theta.size

    @property
    def pre_linear_offset(self) -> int:
        return self.structure.num_component_params

    def pre_linear_params(self) -> tuple[np.ndarray, np.ndarray]:
        """Views ``(W, b)`` of the pre-linear layer inside θ."""
        if self.pre_linear is None:
            raise StructureError("model has no pre-linear layer")
        start = self.pre_linear_offset
        n_w = self.pre_linear.in_dim * self.pre_linear.out_dim
        W = self.theta[start:start + n_w].reshape(self.pre_linear.in_dim, self.pre_linear.out_dim)
        b = self.theta[start + n_w:start + self.pre_linear.size]
        return W, b

    def component_param_indices(self, component: int) -> np.ndarray:
        comp = self.structure.components[component]
        return np.arange(comp.param_start, comp.param_start + comp.arity(self.structure.input_dim))

    def with_theta(self, theta: np.ndarray) -> "SpineModel":
        """Same structure and metadata, different parameters."""
        clone = self.copy()
        clone.theta = np.array(theta, dtype=np.float64)
        if clone.theta.shape != self.theta.shape:
            raise StructureError("replacement theta has the wrong length")
        return clone

    def copy(self) -> "SpineModel":
        clone = SpineModel(
            structure=self.structure,
            theta=self.theta.copy(),
            a=self.a,
            pre_linear=self.pre_linear,
            task=self.task,
            form=self.form,
            x_scaler=self.x_scaler,
            y_scaler=self.y_scaler,
            structure_text=self.structure_text,
            class_names=list(self.class_names) if self.class_names else None,
            target_names=list(self.target_names) if self.target_names else None,
            base_polytope_count=self.base_polytope_count,
        )
        clone._layout = self._layout
        return clone

    def __repr__(self) -> str:
        s = self.structure
        return (
            f"SpineModel(task={self.task.value}, form={self.form.value}, a={self.a}, "
            f"components={len(s.components)}, polytopes={len(s.polytopes)}, "
            f"heads={len(s.heads)}, params={self.num_params})"
        )
