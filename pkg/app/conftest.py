"""Shared fixtures for the QRobust test suite."""

import math

import numpy as np
import pytest
import yaml

from qr_circuits import build_emnist_model, build_lcei_model, initial_parameters
from qr_datasets import Dataset, Sample, gen_lcei


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_emnist_model():
    """Four qubits, two blocks, six encoded features."""
    return build_emnist_model(4, [4, 2], 6)


@pytest.fixture
def small_lcei_model():
    return build_lcei_model(4, [4, 2])


@pytest.fixture
def lcei_splits():
    return gen_lcei(num_qubits=4, per_class=12, train_size=16, seed=5)


@pytest.fixture
def emnist_like_dataset(rng):
    """Random angle features over (0, π) with alternating labels."""
    features = rng.uniform(0.0, math.pi, size=(10, 6))
    labels = [i % 2 for i in range(10)]
    return Dataset.from_arrays(features, labels, range(100, 110), "train", (0.0, math.pi), "emnist")


@pytest.fixture
def random_theta(small_emnist_model, rng):
    return initial_parameters(small_emnist_model, rng)


@pytest.fixture
def angle_sample(rng):
    return Sample(rng.uniform(0.0, math.pi, 6), 1, 7)


@pytest.fixture
def tiny_run_file(tmp_path):
    """Run file shrinking the LCEI pipeline to a few seconds."""
    run = {
        "task": "lcei",
        "profile": "desk-12q",
        "seed": 11,
        "output_dir": str(tmp_path / "run"),
        "system": {"workers": 1, "use_numba": False, "export_plots": False, "colored_console": False},
        "model": {"num_qubits": 4, "block_sizes": [4, 2]},
        "data": {"lcei_per_class": 12, "lcei_train_size": 16},
        "training": {"epochs": 2, "batch_size": 8, "learning_rate": 0.05},
        "attack": {
            "gradient_samples": 4,
            "attack_samples": 6,
            "eps_points": 5,
            "mask_fraction_sweep": [0.5, 1.0],
            "adversarial_per_class": 3,
            "soundness_samples": 2,
            "soundness_trials": 3,
        },
        "readout": {"shots": 2000},
    }
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(run), encoding="utf-8")
    return path
