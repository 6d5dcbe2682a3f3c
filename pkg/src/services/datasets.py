"""
Datasets: simulated generators, CSV and IDX loaders, and seeded splits.

A ``Dataset`` is immutable once built. Regression sets carry an (n, k)
``targets`` matrix; classification sets carry integer ``labels`` plus the
sorted ``class_names`` they index into.
"""
import gzip
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel

from src.errors import DataError, InputError
from src.services.preprocessing import MNIST_MEAN, MNIST_SD

logger = structlog.get_logger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    targets: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    feature_names: list[str] = field(default_factory=list)
    target_names: list[str] = field(default_factory=list)
    class_names: Optional[list[str]] = None
    split: str = "all"

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features[:, None]
        if (self.targets is None) == (self.labels is None):
            raise InputError("a dataset has either targets or labels")
        if not np.all(np.isfinite(features)):
            raise DataError("features contain non-finite values")
        object.__setattr__(self, "features", features)
        features.flags.writeable = False

        if self.targets is not None:
            targets = np.asarray(self.targets, dtype=np.float64)
            if targets.ndim == 1:
                targets = targets[:, None]
            if targets.shape[0] != features.shape[0]:
                raise InputError("features and targets have different row counts")
            if not np.all(np.isfinite(targets)):
                raise DataError("targets contain non-finite values")
            object.__setattr__(self, "targets", targets)
            targets.flags.writeable = False
        else:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (features.shape[0],):
                raise InputError("labels must be one integer per row")
            n_classes = len(self.class_names or []) or (int(labels.max()) + 1 if labels.size else 0)
            if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
                raise DataError(f"labels must lie in [0, {n_classes})")
            object.__setattr__(self, "labels", labels)
            labels.flags.writeable = False

        if not self.feature_names:
            names = [f"x{j}" for j in range(features.shape[1])]
            object.__setattr__(self, "feature_names", names)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def is_classification(self) -> bool:
        return self.labels is not None

    @property
    def num_classes(self) -> int:
        if self.class_names:
            return len(self.class_names)
        if self.labels is None or self.labels.size == 0:
            return 0
        return int(self.labels.max()) + 1

    def subset(self, index: np.ndarray, split: Optional[str] = None) -> "Dataset":
        return replace(
            self,
            features=self.features[index],
            targets=None if self.targets is None else self.targets[index],
            labels=None if self.labels is None else self.labels[index],
            split=split or self.split,
        )


class CsvSchema(BaseModel):
    """Which CSV columns are targets (regression) or the class label."""
    target_columns: list[str] = []
    label_column: Optional[str] = None
    feature_columns: Optional[list[str]] = None


def sim_regression_curve(x: np.ndarray) -> np.ndarray:
    """sin(20x+3) + 2x + 1 + sin(50x+2) + sin(x)"""
    return np.sin(20 * x + 3) + 2 * x + 1 + np.sin(50 * x + 2) + np.sin(x)


def gen_sim_regression(n: int = 1000, noise_scale: float = 0.1, seed: int = 0) -> Dataset:
    """Evenly spaced x on [0, 1] with the simulated curve plus Gaussian noise."""
    if n < 2:
        raise InputError("the simulated regression set needs n >= 2")
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n)
    y = sim_regression_curve(x)
    if noise_scale > 0:
        y = y + rng.normal(0.0, noise_scale, size=n)
    logger.debug("sim_regression_generated", n=n, noise_scale=noise_scale, seed=seed)
    return Dataset(features=x[:, None], targets=y[:, None], feature_names=["x"], target_names=["y"])


def gen_spiral(n_per_class: int = 10000, noise: float = 0.05, seed: int = 0) -> Dataset:
    """
    Two interleaved spirals over t in [0, 1].

    Class A is 5e^{-t}(sin 15t, cos 15t) and class B is 4e^{-1.05t}(sin 15t, cos 15t).
    """
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n_per_class)
    arms = []
    for radius, decay in ((5.0, 1.0), (4.0, 1.05)):
        r = radius * np.exp(-decay * t)
        arms.append(np.column_stack([r * np.sin(15 * t), r * np.cos(15 * t)]))
    features = np.vstack(arms)
    if noise > 0:
        features = features + rng.normal(0.0, noise, size=features.shape)
    labels = np.repeat([0, 1], n_per_class)
    return Dataset(
        features=features,
        labels=labels,
        feature_names=["x", "y"],
        class_names=["A", "B"],
    )


def gen_xor(n: int = 1000, noise: float = 0.0, seed: int = 0) -> Dataset:
    """Uniform points on [-1, 1]^2 labelled by the sign of x*y."""
    rng = np.random.default_rng(seed)
    points = rng.uniform(-1.0, 1.0, size=(n, 2))
    labels = (points[:, 0] * points[:, 1] < 0).astype(np.int64)
    if noise > 0:
        points = points + rng.normal(0.0, noise, size=points.shape)
    return Dataset(features=points, labels=labels, feature_names=["x", "y"], class_names=["0", "1"])


def _read_frame(path: Union[str, Path]) -> pd.DataFrame:
    try:
        # short rows are padded with missing values, as are empty fields
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""])
    except FileNotFoundError as exc:
        raise DataError(f"{path}: file not found") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{path}: missing header row") from exc
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: row length mismatch ({exc})") from exc
    if frame.columns.empty:
        raise DataError(f"{path}: missing header row")
    missing = frame.isna().to_numpy()
    if missing.any():
        row = int(np.argmax(missing.any(axis=1)))
        column = frame.columns[int(np.argmax(missing[row]))]
        # +2: one for the header, one for 1-based line numbers
        raise DataError(
            f"{path}:{row + 2}: expected {len(frame.columns)} fields, column {column!r} is empty"
        )
    return frame


def _numeric(frame: pd.DataFrame, column: str, path: Union[str, Path]) -> np.ndarray:
    parsed = pd.to_numeric(frame[column].str.strip(), errors="coerce")
    bad = parsed.isna() | ~np.isfinite(parsed.to_numpy(dtype=np.float64, na_value=np.nan))
    if bad.any():
        row = int(np.argmax(bad.to_numpy()))
        # +2: one for the header, one for 1-based line numbers
        raise DataError(
            f"{path}:{row + 2}: column {column!r} has unparseable value {frame[column].iloc[row]!r}"
        )
    return parsed.to_numpy(dtype=np.float64)


def _label_indices(
    raw: pd.Series, class_names: Optional[list[str]], path: Union[str, Path]
) -> tuple[np.ndarray, list[str]]:
    """Map label strings by name onto ``class_names`` (sorted file labels when omitted)."""
    blank = (raw == "").to_numpy()
    if blank.any():
        row = int(np.argmax(blank))
        raise DataError(f"{path}:{row + 2}: empty class label")
    if class_names is None:
        class_names = sorted(raw.unique().tolist())
    lookup = {name: index for index, name in enumerate(class_names)}
    mapped = raw.map(lookup)
    unknown = mapped.isna().to_numpy()
    if unknown.any():
        row = int(np.argmax(unknown))
        raise DataError(
            f"{path}:{row + 2}: label {raw.iloc[row]!r} is not one of the classes {class_names}"
        )
    return mapped.to_numpy(dtype=np.int64), list(class_names)


def load_csv(
    path: Union[str, Path], schema: CsvSchema, class_names: Optional[list[str]] = None
) -> Dataset:
    """
    Load a headered, comma-separated file.

    Class labels map by name onto ``class_names`` when given, so a held-out
    or evaluation file lines up with the classes a model was trained on;
    otherwise they map by sorted name.
    """
    frame = _read_frame(path)
    columns = list(frame.columns)
    wanted = list(schema.target_columns) + ([schema.label_column] if schema.label_column else [])
    missing = [c for c in wanted if c not in columns]
    if missing:
        raise DataError(f"{path}: header lacks columns {missing}")
    if not wanted:
        raise DataError(f"{path}: schema names no target or label column")

    feature_columns = schema.feature_columns or [c for c in columns if c not in wanted]
    features = np.column_stack([_numeric(frame, c, path) for c in feature_columns])

    if schema.label_column:
        labels, class_names = _label_indices(frame[schema.label_column].str.strip(), class_names, path)
        dataset = Dataset(
            features=features,
            labels=labels,
            feature_names=feature_columns,
            class_names=class_names,
        )
    else:
        targets = np.column_stack([_numeric(frame, c, path) for c in schema.target_columns])
        dataset = Dataset(
            features=features,
            targets=targets,
            feature_names=feature_columns,
            target_names=list(schema.target_columns),
        )
    logger.info("dataset_loaded", path=str(path), rows=len(dataset), features=features.shape[1])
    return dataset


def save_csv(dataset: Dataset, path: Union[str, Path]) -> None:
    """Write with full float precision so a reload is value-exact."""
    frame = pd.DataFrame(dataset.features, columns=dataset.feature_names)
    if dataset.is_classification:
        names = dataset.class_names or [str(i) for i in range(dataset.num_classes)]
        frame["label"] = [names[i] for i in dataset.labels]
    else:
        target_names = dataset.target_names or [f"y{j}" for j in range(dataset.targets.shape[1])]
        for j, name in enumerate(target_names):
            frame[name] = dataset.targets[:, j]
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info("dataset_written", path=str(path), rows=len(dataset))


def default_schema(path: Union[str, Path]) -> CsvSchema:
    """``label`` column means classification; otherwise the last column is the target."""
    header = list(_read_frame(path).columns)
    if "label" in header:
        return CsvSchema(label_column="label")
    return CsvSchema(target_columns=[header[-1]])


def _open_binary(path: Union[str, Path]) -> bytes:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as handle:
        return handle.read()


def _idx_header(raw: bytes, path, expected_magic: int, ndims: int) -> tuple[int, ...]:
    if len(raw) < 4 + 4 * ndims:
        raise DataError(f"{path}: truncated header ({len(raw)} bytes)")
    magic = int(np.frombuffer(raw, dtype=">u4", count=1)[0])
    if magic != expected_magic:
        raise DataError(
            f"{path}: bad magic number at offset 0: expected 0x{expected_magic:08X}, got 0x{magic:08X}"
        )
    return tuple(int(v) for v in np.frombuffer(raw, dtype=">u4", count=ndims, offset=4))


def load_idx(
    images_path: Union[str, Path],
    labels_path: Union[str, Path],
    mnist_norm: bool = False,
    class_names: Optional[list[str]] = None,
) -> Dataset:
    """
    Load an IDX image/label pair (MNIST, Fashion-MNIST).

    Pixels are scaled to [0, 1]; with ``mnist_norm`` they are then
    standardised with the fixed MNIST mean and sd. ``class_names`` pins the
    class list, so a test file missing some digit keeps the training numbering.
    """
    raw_images = _open_binary(images_path)
    n, rows, cols = _idx_header(raw_images, images_path, IDX_IMAGES_MAGIC, 3)
    offset = 16
    expected = n * rows * cols
    if len(raw_images) - offset != expected:
        raise DataError(
            f"{images_path}: expected {expected} pixel bytes after offset {offset}, "
            f"found {len(raw_images) - offset}"
        )
    pixels = np.frombuffer(raw_images, dtype=np.uint8, offset=offset).reshape(n, rows * cols)

    raw_labels = _open_binary(labels_path)
    (n_labels,) = _idx_header(raw_labels, labels_path, IDX_LABELS_MAGIC, 1)
    if n_labels != n or len(raw_labels) - 8 != n:
        raise DataError(f"{labels_path}: expected {n} labels, header says {n_labels}")
    labels = np.frombuffer(raw_labels, dtype=np.uint8, offset=8).astype(np.int64)

    features = pixels.astype(np.float64) / 255.0
    if mnist_norm:
        features = (features - MNIST_MEAN) / MNIST_SD
    if class_names is None:
        class_names = [str(c) for c in range(int(labels.max()) + 1)]
    elif labels.max() >= len(class_names):
        raise DataError(
            f"{labels_path}: label {int(labels.max())} is outside the {len(class_names)} known classes"
        )
    logger.info("idx_loaded", path=str(images_path), images=n, rows=rows, cols=cols)
    return Dataset(
        features=features,
        labels=labels,
        class_names=list(class_names),
    )


def split(
    dataset: Dataset, fraction: float = 0.8, seed: int = 0, stratified: bool = False
) -> tuple[Dataset, Dataset]:
    """Seeded train/test split; stratified splits keep class proportions."""
    if not 0 < fraction < 1:
        raise InputError(f"fraction must lie strictly between 0 and 1, got {fraction}")
    rng = np.random.default_rng(seed)
    n = len(dataset)

    if stratified:
        if not dataset.is_classification:
            raise InputError("stratified splits need class labels")
        train_parts, test_parts = [], []
        for label in np.unique(dataset.labels):
            members = np.flatnonzero(dataset.labels == label)
            if members.size < 2:
                raise InputError(f"class {label} has fewer than 2 examples")
            members = rng.permutation(members)
            cut = min(max(int(round(fraction * members.size)), 1), members.size - 1)
            train_parts.append(members[:cut])
            test_parts.append(members[cut:])
        train_index = np.sort(np.concatenate(train_parts))
        test_index = np.sort(np.concatenate(test_parts))
    else:
        order = rng.permutation(n)
        cut = int(round(fraction * n))
        train_index, test_index = np.sort(order[:cut]), np.sort(order[cut:])
    if train_index.size == 0 or test_index.size == 0:
        raise InputError(f"a {fraction:g} split of {n} rows leaves one side empty")

    return dataset.subset(train_index, "train"), dataset.subset(test_index, "test")
