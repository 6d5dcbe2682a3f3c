import gzip
import struct

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.errors import DataError, InputError
from src.services.datasets import (
    CsvSchema,
    Dataset,
    default_schema,
    gen_sim_regression,
    gen_spiral,
    gen_xor,
    load_csv,
    load_idx,
    save_csv,
    sim_regression_curve,
    split,
)


def write_idx(tmp_path, images: np.ndarray, labels: np.ndarray, compress: bool = False):
    """IDX image/label pair in the big-endian layout MNIST ships with."""
    n, rows, cols = images.shape
    image_bytes = struct.pack(">IIII", 0x00000803, n, rows, cols) + images.astype(np.uint8).tobytes()
    label_bytes = struct.pack(">II", 0x00000801, n) + labels.astype(np.uint8).tobytes()
    suffix = ".gz" if compress else ""
    opener = gzip.open if compress else open
    image_path = tmp_path / f"images.idx{suffix}"
    label_path = tmp_path / f"labels.idx{suffix}"
    with opener(image_path, "wb") as handle:
        handle.write(image_bytes)
    with opener(label_path, "wb") as handle:
        handle.write(label_bytes)
    return image_path, label_path


def test_sim_curve_formula():
    """sin(20x+3) + 2x + 1 + sin(50x+2) + sin(x) at a known point."""
    assert sim_regression_curve(np.array([0.0]))[0] == pytest.approx(np.sin(3) + 1 + np.sin(2))


def test_sim_regression_is_seeded_and_evenly_spaced():
    """Same seed, same noise; x covers [0, 1] evenly."""
    first = gen_sim_regression(n=50, seed=3)
    assert_allclose(first.targets, gen_sim_regression(n=50, seed=3).targets)
    assert_allclose(np.diff(first.features[:, 0]), 1 / 49)


def test_noiseless_sim_regression_is_the_curve():
    """Zero noise reproduces the curve exactly."""
    data = gen_sim_regression(n=20, noise_scale=0.0)
    assert_allclose(data.targets[:, 0], sim_regression_curve(data.features[:, 0]))


def test_spiral_classes_and_radii():
    """Class A starts at radius 5 and class B at radius 4."""
    data = gen_spiral(n_per_class=100, noise=0.0)
    assert data.class_names == ["A", "B"]
    assert np.bincount(data.labels).tolist() == [100, 100]
    assert np.linalg.norm(data.features[0]) == pytest.approx(5.0)
    assert np.linalg.norm(data.features[100]) == pytest.approx(4.0)


def test_xor_labels_follow_quadrants():
    """Label 1 exactly where x and y have opposite signs."""
    data = gen_xor(n=200, seed=1)
    assert np.array_equal(data.labels, (data.features.prod(axis=1) < 0).astype(int))


def test_csv_round_trip_is_exact(tmp_path, sim_data):
    """Full-precision floats survive a save and reload."""
    path = tmp_path / "data.csv"
    save_csv(sim_data, path)
    loaded = load_csv(path, default_schema(path))
    assert np.array_equal(loaded.features, sim_data.features)
    assert np.array_equal(loaded.targets, sim_data.targets)


def test_csv_labels_map_by_sorted_name(tmp_path):
    """Class names are sorted and labels index into them."""
    path = tmp_path / "labels.csv"
    path.write_text("a,b,label\n1,2,setosa\n3,4,iris\n5,6,setosa\n")
    data = load_csv(path, default_schema(path))
    assert data.class_names == ["iris", "setosa"]
    assert data.labels.tolist() == [1, 0, 1]


def test_csv_labels_map_onto_known_classes(tmp_path):
    """With the model's classes given, a file lacking one keeps their numbering."""
    path = tmp_path / "held_out.csv"
    path.write_text("a,b,label\n1,2,versicolor\n3,4,virginica\n")
    data = load_csv(path, default_schema(path), class_names=["setosa", "versicolor", "virginica"])
    assert data.class_names == ["setosa", "versicolor", "virginica"]
    assert data.labels.tolist() == [1, 2]
    assert data.num_classes == 3


def test_csv_unknown_label_names_its_line(tmp_path):
    """A label outside the known classes is a data error."""
    path = tmp_path / "held_out.csv"
    path.write_text("a,b,label\n1,2,cat\n3,4,emu\n")
    with pytest.raises(DataError, match=r":3: label 'emu'"):
        load_csv(path, default_schema(path), class_names=["cat", "dog"])


def test_csv_short_row_is_rejected(tmp_path):
    """A row with too few fields never becomes a class named ''."""
    path = tmp_path / "short.csv"
    path.write_text("x,y,label\n0.1,0.2,a\n0.3,0.4,b\n0.5,0.6\n")
    with pytest.raises(DataError, match=r":4: expected 3 fields"):
        load_csv(path, default_schema(path))


def test_csv_empty_label_is_rejected(tmp_path):
    """A blank label cell is as bad as a missing one."""
    path = tmp_path / "blank.csv"
    path.write_text("x,label\n0.1,a\n0.2,  \n")
    with pytest.raises(DataError, match=r":3: empty class label"):
        load_csv(path, default_schema(path))


def test_csv_reports_bad_line(tmp_path):
    """An unparseable cell names its file line and column."""
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n1,2\n3,oops\n")
    with pytest.raises(DataError, match=r":3: column 'y'"):
        load_csv(path, CsvSchema(target_columns=["y"]))


def test_csv_missing_column(tmp_path):
    """Asking for a column the header lacks is a data error."""
    path = tmp_path / "data.csv"
    path.write_text("x,y\n1,2\n")
    with pytest.raises(DataError, match="header lacks"):
        load_csv(path, CsvSchema(target_columns=["z"]))


def test_csv_empty_file(tmp_path):
    """A file without a header row is rejected."""
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(DataError, match="missing header"):
        load_csv(path, CsvSchema(target_columns=["y"]))


@pytest.mark.parametrize("compress", [False, True])
def test_idx_pair_loads(tmp_path, compress):
    """Pixels scale to [0, 1]; labels come through unchanged."""
    images = np.arange(3 * 2 * 2).reshape(3, 2, 2) * 20
    labels = np.array([0, 2, 1])
    image_path, label_path = write_idx(tmp_path, images, labels, compress)
    data = load_idx(image_path, label_path)
    assert data.features.shape == (3, 4)
    assert_allclose(data.features, images.reshape(3, 4) / 255.0)
    assert data.labels.tolist() == [0, 2, 1]
    assert data.class_names == ["0", "1", "2"]


def test_idx_known_classes_survive_missing_digits(tmp_path):
    """A test file without the top digit still has every training class."""
    image_path, label_path = write_idx(tmp_path, np.zeros((2, 2, 2)), np.array([0, 1]))
    data = load_idx(image_path, label_path, class_names=[str(c) for c in range(10)])
    assert data.num_classes == 10
    with pytest.raises(DataError, match="outside the 1 known classes"):
        load_idx(image_path, label_path, class_names=["0"])


def test_idx_bad_magic_names_both_values(tmp_path):
    """A wrong magic number reports expected and actual."""
    image_path, label_path = write_idx(tmp_path, np.zeros((1, 2, 2)), np.zeros(1))
    image_path.write_bytes(struct.pack(">IIII", 0x00000801, 1, 2, 2) + bytes(4))
    with pytest.raises(DataError, match="expected 0x00000803, got 0x00000801"):
        load_idx(image_path, label_path)


def test_idx_truncated_pixels(tmp_path):
    """Fewer pixel bytes than the header promises is a data error."""
    image_path, label_path = write_idx(tmp_path, np.zeros((2, 2, 2)), np.zeros(2))
    image_path.write_bytes(image_path.read_bytes()[:-3])
    with pytest.raises(DataError, match="pixel bytes"):
        load_idx(image_path, label_path)


def test_stratified_split_keeps_proportions(xor_data):
    """Each class is split at the requested fraction."""
    train, test = split(xor_data, 0.75, seed=2, stratified=True)
    assert len(train) + len(test) == len(xor_data)
    for label in (0, 1):
        total = int(np.sum(xor_data.labels == label))
        assert int(np.sum(train.labels == label)) == round(0.75 * total)


def test_split_is_seeded(sim_data):
    """Same seed, same partition; different seed, different one."""
    a, _ = split(sim_data, 0.8, seed=5)
    b, _ = split(sim_data, 0.8, seed=5)
    c, _ = split(sim_data, 0.8, seed=6)
    assert np.array_equal(a.features, b.features)
    assert not np.array_equal(a.features, c.features)


def test_split_fraction_bounds(sim_data):
    """Fractions must lie strictly inside (0, 1)."""
    with pytest.raises(InputError):
        split(sim_data, 1.0)


def test_split_of_tiny_set_is_input_error():
    """A split that leaves one side empty is refused, not a bare ValueError."""
    tiny = Dataset(features=np.zeros((2, 1)), labels=np.array([0, 1]), class_names=["a", "b"])
    with pytest.raises(InputError, match="one side empty"):
        split(tiny, 0.9, seed=0)


def test_empty_label_subset_is_allowed(xor_data):
    """An empty selection of a classification set is still a dataset."""
    empty = xor_data.subset(np.array([], dtype=np.intp))
    assert len(empty) == 0
    assert empty.num_classes == 2


def test_dataset_needs_targets_or_labels():
    """Exactly one of targets and labels."""
    with pytest.raises(InputError):
        Dataset(features=np.zeros((2, 1)))


def test_dataset_rejects_non_finite_features():
    """NaN features never enter a dataset."""
    with pytest.raises(DataError):
        Dataset(features=np.array([[np.nan]]), targets=np.array([[1.0]]))


def test_dataset_arrays_are_read_only(sim_data):
    """Datasets are immutable once built."""
    with pytest.raises(ValueError):
        sim_data.features[0, 0] = 1.0
