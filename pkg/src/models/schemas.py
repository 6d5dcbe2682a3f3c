from enum import Enum
from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

FORMAT_VERSION = 1


class ComponentFamily(str, Enum):
    """Kinds of learnable inequality pieces."""
    LINEAR = "lin"
    QUADRATIC = "quad"
    SINUSOIDAL = "sin"
    SIGMOID = "sig"


def family_arity(family: ComponentFamily, input_dim: int) -> int:
    """Number of parameters one component of ``family`` needs for ``input_dim`` inputs."""
    if family is ComponentFamily.QUADRATIC:
        return 2 * input_dim + 1
    if family is ComponentFamily.SINUSOIDAL:
        return input_dim + 3
    return input_dim + 1


class TaskKind(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


class EvaluationForm(str, Enum):
    """Which evaluator a model is trained and served with."""
    LOGEXP = "logexp"
    MAXMIN = "maxmin"


class ComponentFunction(BaseModel):
    """One component f_ij(x, θ); its parameters start at ``param_start`` in θ."""
    family: ComponentFamily
    param_start: int = Field(ge=0)
    complemented: bool = False

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _complement_only_on_sigmoid(self) -> "ComponentFunction":
        if self.complemented and self.family is not ComponentFamily.SIGMOID:
            raise ValueError("complemented is only valid for sigmoid components")
        return self

    def arity(self, input_dim: int) -> int:
        return family_arity(self.family, input_dim)

    def param_slice(self, input_dim: int) -> slice:
        return slice(self.param_start, self.param_start + self.arity(input_dim))


class SetStructure(BaseModel):
    """
    DNF wiring of a model.

    ``polytopes`` are intersection groups of component indices and ``heads``
    are union groups of polytope indices, one per regressor output or class
    logit. A polytope listed by two or more heads is shared. Components whose
    ``param_start`` coincide alias the same parameters (tree nodes).
    """
    input_dim: int = Field(gt=0)
    components: list[ComponentFunction]
    polytopes: list[list[int]]
    heads: list[list[int]]
    head_names: Optional[list[str]] = None

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_wiring(self) -> "SetStructure":
        n_comp = len(self.components)
        if not self.components or not self.polytopes or not self.heads:
            raise ValueError("components, polytopes and heads must all be nonempty")

        seen = [0] * n_comp
        for p, members in enumerate(self.polytopes):
            if not members:
                raise ValueError(f"polytope {p} is empty")
            for c in members:
                if not 0 <= c < n_comp:
                    raise ValueError(f"polytope {p} references unknown component {c}")
                seen[c] += 1
        if any(count != 1 for count in seen):
            raise ValueError("every component must belong to exactly one polytope")

        referenced = [0] * len(self.polytopes)
        for h, members in enumerate(self.heads):
            if not members:
                raise ValueError(f"head {h} is empty")
            if len(set(members)) != len(members):
                raise ValueError(f"head {h} lists a polytope twice")
            for p in members:
                if not 0 <= p < len(self.polytopes):
                    raise ValueError(f"head {h} references unknown polytope {p}")
                referenced[p] += 1
        if any(count == 0 for count in referenced):
            raise ValueError("every polytope must be referenced by at least one head")

        if self.head_names is not None and len(self.head_names) != len(self.heads):
            raise ValueError("head_names must name every head")

        slices: dict[int, ComponentFunction] = {}
        for comp in self.components:
            other = slices.setdefault(comp.param_start, comp)
            if other.family is not comp.family:
                raise ValueError(f"aliased parameters at {comp.param_start} mix families")
        cursor = 0
        for start in sorted(slices):
            if start != cursor:
                raise ValueError(f"parameter layout has a gap or overlap at {start}")
            cursor = start + slices[start].arity(self.input_dim)
        return self

    @property
    def num_component_params(self) -> int:
        return max(c.param_start + c.arity(self.input_dim) for c in self.components)

    @property
    def max_polytope_size(self) -> int:
        return max(len(p) for p in self.polytopes)

    @property
    def max_head_size(self) -> int:
        return max(len(h) for h in self.heads)

    def shared_polytopes(self) -> list[int]:
        """Polytopes referenced by two or more heads."""
        counts = [0] * len(self.polytopes)
        for members in self.heads:
            for p in members:
                counts[p] += 1
        return [p for p, count in enumerate(counts) if count > 1]


class PreLinear(BaseModel):
    """Linear layer without activation applied before the components."""
    in_dim: int = Field(gt=0)
    out_dim: int = Field(gt=0)

    @property
    def size(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim


class ScalerKind(str, Enum):
    ZSCORE = "zscore"
    MINMAX_UNIT = "minmax"
    IDENTITY = "identity"


class Scaler(BaseModel):
    """Per-column affine scaler: ``(x - shift) / scale``."""
    kind: ScalerKind = ScalerKind.IDENTITY
    shift: list[float] = Field(default_factory=list)
    scale: list[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_stats(self) -> "Scaler":
        if len(self.shift) != len(self.scale):
            raise ValueError("shift and scale must have the same length")
        if any(s <= 0 for s in self.scale):
            raise ValueError("scale entries must be positive")
        return self


class LossKind(str, Enum):
    MSE = "mse"
    NLL = "nll"


class InitScheme(str, Enum):
    UNIFORM = "uniform"
    NORMAL = "normal"


class TrainConfig(BaseModel):
    """Hyperparameters for one training run."""
    epochs: int = Field(default=2000, ge=0)
    batch_size: int = Field(default=0, ge=0)  # 0 means full batch
    learning_rate: float = Field(default=1e-2, gt=0)
    beta1: float = Field(default=0.9, gt=0, lt=1)
    beta2: float = Field(default=0.999, gt=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    seed: int = 0
    loss: Optional[LossKind] = None  # derived from the model task when unset
    a: Optional[float] = Field(default=None, gt=0)  # overrides the model sharpness
    form: EvaluationForm = EvaluationForm.LOGEXP
    log_every: int = Field(default=100, ge=1)
    grad_clip: float = Field(default=1e3, gt=0)
    threads: int = Field(default=1, ge=1)
    x_scaling: ScalerKind = ScalerKind.ZSCORE
    y_scaling: Optional[ScalerKind] = None  # minmax for regression when unset

    model_config = ConfigDict(extra="forbid")

    @field_validator("a")
    @classmethod
    def _finite_a(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and value == float("inf"):
            raise ValueError("a must be finite")
        return value


class EpochRecord(BaseModel):
    epoch: int
    loss: float
    metric: float


class TrainingHistory(BaseModel):
    """Per-epoch loss and metric; metric is accuracy or z-score-scale MSE."""
    records: list[EpochRecord] = Field(default_factory=list)
    metric_name: str = "mse"
    best_epoch: Optional[int] = None
    best_loss: Optional[float] = None
    diverged: bool = False
    clip_events: int = 0

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)
        if self.best_loss is None or record.loss < self.best_loss:
            self.best_loss = record.loss
            self.best_epoch = record.epoch

    @property
    def final(self) -> Optional[EpochRecord]:
        return self.records[-1] if self.records else None

    @property
    def best_metric(self) -> Optional[float]:
        if not self.records:
            return None
        metrics = [r.metric for r in self.records]
        return max(metrics) if self.metric_name == "accuracy" else min(metrics)


class ClassifierSpec(BaseModel):
    """
    Classifier assembled over a pool of polytopes.

    ``polytope_sizes[p]`` is the number of components of pool polytope ``p``
    and ``heads[c]`` lists the pool polytopes unioned for class ``c``.
    """
    num_classes: int = Field(ge=2)
    input_dim: int = Field(gt=0)
    polytope_sizes: list[int]
    heads: list[list[int]]
    family: ComponentFamily = ComponentFamily.LINEAR
    a: float = Field(default=1.0, gt=0)
    pre_linear_width: Optional[int] = Field(default=None, gt=0)
    class_names: Optional[list[str]] = None

    @model_validator(mode="after")
    def _check_topology(self) -> "ClassifierSpec":
        if len(self.heads) != self.num_classes:
            raise ValueError("one head per class is required")
        if any(size < 1 for size in self.polytope_sizes):
            raise ValueError("polytopes need at least one component")
        used = set()
        for c, members in enumerate(self.heads):
            if not members:
                raise ValueError(f"class {c} has no polytopes")
            for p in members:
                if not 0 <= p < len(self.polytope_sizes):
                    raise ValueError(f"class {c} references unknown polytope {p}")
            used.update(members)
        if len(used) != len(self.polytope_sizes):
            raise ValueError("every pool polytope must belong to at least one class")
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise ValueError("class_names must name every class")
        return self

    @classmethod
    def uniform(
        cls,
        num_classes: int,
        input_dim: int,
        unions: int,
        intersections: int,
        **kwargs,
    ) -> "ClassifierSpec":
        """``unions`` private polytopes of ``intersections`` components per class."""
        heads = [
            list(range(c * unions, (c + 1) * unions)) for c in range(num_classes)
        ]
        return cls(
            num_classes=num_classes,
            input_dim=input_dim,
            polytope_sizes=[intersections] * (unions * num_classes),
            heads=heads,
            **kwargs,
        )

    @classmethod
    def shared(
        cls,
        num_classes: int,
        input_dim: int,
        private: int,
        shared: int,
        intersections: int,
        **kwargs,
    ) -> "ClassifierSpec":
        """``shared`` polytopes common to every class plus ``private`` per class."""
        shared_ids = list(range(shared))
        heads = [
            [shared + c * private + k for k in range(private)] + shared_ids
            for c in range(num_classes)
        ]
        return cls(
            num_classes=num_classes,
            input_dim=input_dim,
            polytope_sizes=[intersections] * (shared + private * num_classes),
            heads=heads,
            **kwargs,
        )


class TreeLeaf(BaseModel):
    label: str


class TreeNode(BaseModel):
    """Sigmoid decision node; ``if_true`` follows σ, ``if_false`` follows 1 - σ."""
    name: str
    if_true: Union["TreeNode", TreeLeaf]
    if_false: Union["TreeNode", TreeLeaf]


TreeNode.model_rebuild()


class TreeSpec(BaseModel):
    root: TreeNode
    class_names: Optional[list[str]] = None

    @model_validator(mode="after")
    def _check_tree(self) -> "TreeSpec":
        labels: set[str] = set()

        def walk(node: Union[TreeNode, TreeLeaf], path: tuple[str, ...]) -> None:
            if isinstance(node, TreeLeaf):
                labels.add(node.label)
                return
            if node.name in path:
                raise ValueError(f"node {node.name} repeats on a root-to-leaf path")
            walk(node.if_true, path + (node.name,))
            walk(node.if_false, path + (node.name,))

        walk(self.root, ())
        if self.class_names is not None:
            missing = set(self.class_names) - labels
            if missing:
                raise ValueError(f"classes without a leaf: {sorted(missing)}")
            if labels - set(self.class_names):
                raise ValueError("tree has leaves for undeclared classes")
        if len(labels) < 2:
            raise ValueError("a tree classifier needs at least two classes")
        return self

    def classes(self) -> list[str]:
        if self.class_names is not None:
            return list(self.class_names)
        labels: set[str] = set()

        def collect(node: Union[TreeNode, TreeLeaf]) -> None:
            if isinstance(node, TreeLeaf):
                labels.add(node.label)
            else:
                collect(node.if_true)
                collect(node.if_false)

        collect(self.root)
        return sorted(labels)


class FiniteDifferenceReport(BaseModel):
    """Worst disagreement between analytic and central-difference gradients."""
    max_rel_error: float
    max_abs_error: float
    worst_index: Optional[int] = None
    num_params: int
    eps: float


class AnalysisReport(BaseModel):
    """Summary written next to the CSV outputs of an analysis run."""
    mode: str
    num_inputs: int
    num_components: int
    num_params: int
    active_polytopes: Optional[list[list[int]]] = None
    active_components: Optional[list[list[int]]] = None
    saliency_scores: Optional[list[list[float]]] = None
    saliency_argmax: Optional[list[int]] = None
    std_shape: Optional[tuple[int, int]] = None
    expressed_components: Optional[int] = None


class ModelDocument(BaseModel):
    """Persisted model: the single JSON document written by ``save_model``."""
    format_version: int = FORMAT_VERSION
    task: TaskKind
    form: EvaluationForm = EvaluationForm.LOGEXP
    structure: SetStructure
    structure_text: Optional[str] = None
    a: float = Field(gt=0)
    theta: list[float]
    pre_linear: Optional[PreLinear] = None
    x_scaler: Optional[Scaler] = None
    y_scaler: Optional[Scaler] = None
    class_names: Optional[list[str]] = None
    target_names: Optional[list[str]] = None
    base_polytope_count: Optional[int] = None

    @field_validator("format_version")
    @classmethod
    def _known_version(cls, value: int) -> int:
        if value != FORMAT_VERSION:
            raise ValueError(f"unsupported format_version {value}")
        return value


# Command results, printed as JSON on stdout


class TrainSummary(BaseModel):
    examples: int
    params: int
    epochs_run: int
    best_epoch: Optional[int] = None
    best_loss: Optional[float] = None
    best_metric: Optional[float] = None
    final_metric: Optional[float] = None
    metric_name: str
    test_metric: Optional[float] = None
    diverged: bool = False
    clip_events: int = 0


class EvalSummary(BaseModel):
    examples: int
    form: EvaluationForm
    loss: float
    metric: float
    metric_name: str
    against_metric: Optional[float] = None


class DistillSummary(BaseModel):
    epochs: int
    metric_name: str
    logexp: float
    maxmin_before: float
    maxmin_after: float


class TargetSummary(BaseModel):
    region_rows: int
    replicated: list[int]
    polytopes: int
    region_before: float
    region_after: float
    off_region_before: Optional[float] = None
    off_region_after: Optional[float] = None
    global_before: float
    global_after: float


class FailureDemoSummary(BaseModel):
    """Log-exp training against direct max-min training of one structure."""
    seed: int
    logexp_mse: float
    maxmin_mse: float
    logexp_expressed: int
    maxmin_expressed: int
    maxmin_ever_active: int
