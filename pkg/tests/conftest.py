import os

import numpy as np
import pytest

from src.models.model import SpineModel
from src.models.schemas import TaskKind, TrainConfig
from src.services.classifier import build_from_text
from src.services.datasets import gen_sim_regression, gen_xor, save_csv
from src.services.structure_parser import parse_structure
from src.services.trainer import init_params

FAMILIES = ("lin", "quad", "sin", "sig", "!sig")


def random_model(
    text: str,
    input_dim: int = 2,
    a: float = 1.0,
    seed: int = 0,
    task: TaskKind = TaskKind.REGRESSION,
) -> SpineModel:
    """Model over ``text`` with seeded random parameters and no scalers."""
    structure = parse_structure(text, input_dim)
    return SpineModel(
        structure=structure,
        theta=init_params(structure, seed=seed),
        a=a,
        task=task,
    )


def three_lines(a: float = 10.0) -> SpineModel:
    """One polytope: min(x, 1, 3.1 - x)."""
    structure = parse_structure("head = (lin & lin & lin)", input_dim=1)
    return SpineModel(structure=structure, theta=np.array([1.0, 0.0, 0.0, 1.0, -1.0, 3.1]), a=a)


def sine_union(a: float = 10.0) -> SpineModel:
    """Three hand-set polytopes whose union traces one and a half periods of sin(x)."""
    structure = parse_structure("head = uniform(lin, 3, 3)", input_dim=1)
    theta = np.array([
        1.0, 0.0, 0.0, 1.0, -1.0, 3.1,
        1.0, -4.1, 0.0, 1.0, -1.0, 5.5,
        1.0, -6.3, 0.0, -1.0, -1.0, 9.4,
    ])
    return SpineModel(structure=structure, theta=theta, a=a)


def random_text(rng: np.random.Generator, max_size: int = 8) -> str:
    """Random head of random polytopes drawn from every family."""
    polytopes = []
    for _ in range(rng.integers(1, max_size + 1)):
        atoms = rng.choice(FAMILIES, size=rng.integers(1, max_size + 1))
        polytopes.append("(" + " & ".join(atoms) + ")")
    return "head = " + " | ".join(polytopes)


@pytest.fixture
def rng():
    """Seeded generator so every test draws the same points."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_regressor():
    """Two polytopes of linear components over 2 inputs."""
    return random_model("head = (lin & lin) | (lin & lin & lin)", input_dim=2, a=2.0)


@pytest.fixture
def mixed_model():
    """Every family, a complemented sigmoid, and two heads sharing a polytope."""
    text = (
        "shared := (lin & sig)\n"
        "head left = shared | (quad & sin)\n"
        "head right = shared | (!sig & lin)\n"
    )
    return random_model(text, input_dim=3, a=1.5, seed=7)


@pytest.fixture
def sim_data():
    """Small noisy sample of the simulated regression curve."""
    return gen_sim_regression(n=200, noise_scale=0.1, seed=0)


@pytest.fixture
def xor_data():
    """Small XOR sample, two classes."""
    return gen_xor(n=400, seed=0)


@pytest.fixture
def quick_config():
    """A short full-batch run, enough to move the loss."""
    return TrainConfig(epochs=30, learning_rate=1e-2, seed=0, log_every=10)


@pytest.fixture
def sim_regressor():
    """Under-provisioned regressor for the simulated curve."""
    return build_from_text("head = uniform(lin, 4, 2)", input_dim=1, a=10.0, seed=0, target_names=["y"])


@pytest.fixture
def sim_csv(tmp_path, sim_data):
    """The simulated sample written as a headered CSV."""
    path = tmp_path / "sim.csv"
    save_csv(sim_data, path)
    return path


@pytest.fixture
def xor_csv(tmp_path, xor_data):
    """The XOR sample written as a headered CSV with a label column."""
    path = tmp_path / "xor.csv"
    save_csv(xor_data, path)
    return path


@pytest.fixture
def mnist_dir():
    """Local MNIST IDX files; the test is skipped when they are absent."""
    path = os.environ.get("SPINE_MNIST_DIR")
    if not path:
        pytest.skip("SPINE_MNIST_DIR is not set")
    return path


@pytest.fixture
def uci_dir():
    """Local UCI CSVs (iris, banknote, pima); skipped when absent."""
    path = os.environ.get("SPINE_UCI_DIR")
    if not path:
        pytest.skip("SPINE_UCI_DIR is not set")
    return path
