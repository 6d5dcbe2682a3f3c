import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from src.errors import InputError
from src.models.model import SpineModel
from src.services import analysis
from src.services.evaluator import eval_components, forward_logexp_batch, forward_maxmin
from src.services.structure_parser import parse_structure
from tests.conftest import sine_union


@pytest.fixture
def tent():
    """max(min(x, 1 - x), 0.2) on [0, 1] with a sharp log-exp form."""
    structure = parse_structure("head = (lin & lin) | (lin)", input_dim=1)
    return SpineModel(structure=structure, theta=np.array([1.0, 0.0, -1.0, 1.0, 0.0, 0.2]), a=50.0)


def test_saliency_picks_the_active_component(tent):
    """At a large sharpness the winning component dominates saliency."""
    scores, winner = analysis.saliency(tent, np.array([0.3]))
    assert scores.shape == (3,)
    assert winner == 0
    assert analysis.saliency(tent, np.array([0.95]))[1] == 2


def test_saliency_head_out_of_range(tent):
    """Asking for a head the model lacks is an input error."""
    with pytest.raises(InputError):
        analysis.saliency(tent, np.array([0.3]), head=1)


def test_saliency_batch_rows(tent):
    """One score row and one winner per input."""
    X = np.array([[0.1], [0.3], [0.7]])
    scores, winners = analysis.saliency_batch(tent, X)
    assert scores.shape == (3, 3)
    assert winners.tolist() == [2, 0, 1]


def test_active_map_agrees_with_maxmin(tent):
    """The map is the max-min active pair at each input."""
    X = np.linspace(0, 1, 11)[:, None]
    polytopes, components = analysis.active_map(tent, X)
    for i, x in enumerate(X):
        _, p, c = forward_maxmin(tent, x)
        assert polytopes[i, 0] == p[0]
        assert components[i, 0] == c[0]
    assert analysis.expressed_components(tent, X) == 3


def test_profile_grid_uses_bin_centres(tent):
    """n equal bins over [lo, hi], sampled at their centres."""
    grid = analysis.profile_grid(tent, 0.0, 1.0, n_bins=4)
    assert_allclose(grid[:, 0], [0.125, 0.375, 0.625, 0.875])


def test_profile_grid_zero_width(tent):
    """An empty domain is refused."""
    with pytest.raises(InputError, match="zero width"):
        analysis.profile_grid(tent, 0.5, 0.5)


def test_perturbation_profile_shape_and_threads(tent):
    """One row per parameter, one column per bin, independent of threads."""
    single = analysis.perturbation_profile(tent, 0.0, 1.0, n_bins=50, n_draws=16, seed=3)
    threaded = analysis.perturbation_profile(tent, 0.0, 1.0, n_bins=50, n_draws=16, seed=3, threads=3)
    assert single.shape == (tent.num_params, 50)
    assert np.array_equal(single, threaded)
    assert np.all(single >= 0)


def test_zero_parameter_has_no_spread(tent):
    """Scaling a zero weight does nothing, so its std is zero everywhere."""
    std = analysis.perturbation_profile(tent, 0.0, 1.0, n_bins=20, n_draws=8)
    assert np.all(std[4] == 0.0)


def test_perturbation_is_local(tent):
    """The floor's bias moves the output only where the floor is active."""
    grid = analysis.profile_grid(tent, 0.0, 1.0, n_bins=500)
    std = analysis.perturbation_profile(tent, 0.0, 1.0, n_bins=500, n_draws=32)
    shares = analysis.locality_scores(tent, std, grid)
    assert np.isnan(shares[4])
    assert shares[5] >= 0.8


def test_locality_checks_matrix_shape(tent):
    """A std matrix of the wrong shape is refused."""
    grid = analysis.profile_grid(tent, 0.0, 1.0, n_bins=10)
    with pytest.raises(InputError):
        analysis.locality_scores(tent, np.zeros((2, 10)), grid)


def test_summarize_locality_ignores_nan():
    """Fraction of defined shares at or above the threshold."""
    assert analysis.summarize_locality(np.array([0.9, 0.5, np.nan, 0.85])) == pytest.approx(2 / 3)


def test_export_recomposes_head_output(tent):
    """Component curves alone rebuild the head output."""
    grid = np.linspace(0, 1, 21)[:, None]
    export = analysis.export_components(tent, grid)
    assert {"x0", "c0", "c1", "c2", "p0", "p1", "y0"} <= set(export.curves.columns)
    assert_allclose(analysis.recompose(tent, export)[:, 0], forward_logexp_batch(tent, grid)[:, 0], rtol=1e-12)
    meta = export.metadata.set_index("component")
    assert meta.loc[1, "slope_0"] == -1.0
    assert meta.loc[1, "intercept"] == 1.0
    assert meta.loc[2, "polytope"] == 1


def test_linearity_check_on_winning_region(tent):
    """Where component 0 wins, the output tracks it with slope one."""
    X = np.linspace(0.3, 0.42, 30)[:, None]
    report = analysis.linearity_check(tent, X, component=0)
    assert report.points == 30
    assert report.r_squared > 0.999
    assert report.slope == pytest.approx(1.0, abs=1e-2)


def test_linearity_check_needs_points(tent):
    """A component that never wins cannot be checked."""
    with pytest.raises(InputError):
        analysis.linearity_check(tent, np.array([[0.3], [0.35]]), component=1)


def test_write_table_formats(tmp_path):
    """CSV for .csv paths, '#'-headed whitespace columns otherwise."""
    frame = pd.DataFrame({"x": [0.5, 1.0], "y": [2.0, 3.0]})
    analysis.write_table(frame, tmp_path / "t.csv")
    analysis.write_table(frame, tmp_path / "t.dat")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "x,y"
    lines = (tmp_path / "t.dat").read_text().splitlines()
    assert lines[0] == "# x y"
    assert lines[1] == "0.5 2"


def test_grid_from_range_covers_box():
    """points per axis, all combinations."""
    structure = parse_structure("head = (lin)", input_dim=2)
    model = SpineModel(structure=structure, theta=np.zeros(3), a=1.0)
    grid = analysis.grid_from_range(model, [(0, 1), (-1, 1)], points=5)
    assert grid.shape == (25, 2)
    assert grid[:, 1].min() == -1.0


def test_active_map_on_sine_union():
    """Each of the three humps owns its own stretch of the line."""
    polytopes, components = analysis.active_map(sine_union(), np.array([[0.5], [4.8], [8.0]]))
    assert polytopes[:, 0].tolist() == [0, 1, 2]
    # the identity line at 0.5, the constant -1 at 8
    assert components[0, 0] == 0
    assert components[2, 0] == 7


def test_active_component_is_its_polytope_minimum(mixed_model, rng):
    """The reported component holds the minimum value inside its polytope."""
    X = rng.normal(size=(30, 3))
    polytopes, components = analysis.active_map(mixed_model, X)
    for i, x in enumerate(X):
        values = eval_components(mixed_model, x)
        for h in range(mixed_model.num_heads):
            members = mixed_model.structure.polytopes[polytopes[i, h]]
            assert values[components[i, h]] == values[members].min()
