"""Classical baseline network tests."""

from dataclasses import replace

import numpy as np
import pytest

import qr_fnn
from qr_attack import Mask, attack_sweep
from qr_datasets import Dataset
from qr_errors import RobustnessError, ValidationError
from qr_fnn import (
    FnnClassifier,
    FnnModel,
    fnn_evaluate,
    fnn_forward,
    fnn_gradient,
    fnn_input_gradient,
    fnn_loss,
    fnn_robustness_compare,
    fnn_train,
    load_fnn,
    save_fnn,
)
from qr_robustness import NoiseParams, SensitivityRecord, sensitivity_records
from qr_testing import finite_difference
from qr_training import TrainConfig


@pytest.fixture
def blobs(rng):
    """Two separable Gaussian blobs in [0, 1]^9 as (train, test)."""
    centres = {0: np.full(9, 0.3), 1: np.full(9, 0.7)}
    labels = np.array([i % 2 for i in range(60)])
    features = np.stack([centres[l] + rng.normal(0, 0.08, 9) for l in labels])
    full = Dataset.from_arrays(features, labels, range(60), "train", (0.0, 1.0), "fnn")
    return full.with_samples(full.samples[:40]), Dataset(full.samples[40:], "test", (0.0, 1.0), "fnn")


def test_parameter_layout():
    model = FnnModel.zeros(4, hidden=3)
    assert model.num_params == 3 * 4 + 3 + 3 + 1
    restored = FnnModel.unflatten(np.arange(19.0), 4, 3)
    np.testing.assert_array_equal(restored.flatten(), np.arange(19.0))
    with pytest.raises(ValidationError):
        FnnModel.unflatten(np.zeros(5), 4, 3)


def test_zero_network_predicts_half():
    assert fnn_forward(FnnModel.zeros(3), np.ones(3)) == 0.5
    with pytest.raises(ValidationError):
        fnn_forward(FnnModel.zeros(3), np.ones(4))


def test_parameter_gradient_matches_finite_differences(rng):
    model = FnnModel.initialize(5, 4, rng)
    x = rng.uniform(0, 1, (6, 5))
    labels = np.array([0, 1, 1, 0, 1, 0])
    _, grad = fnn_gradient(model, x, labels)

    def mean_loss(params):
        m = FnnModel.unflatten(params, 5, 4)
        return np.mean([fnn_loss(m, xi, yi) for xi, yi in zip(x, labels)])

    np.testing.assert_allclose(grad, finite_difference(mean_loss, model.flatten()), atol=1e-7)


def test_input_gradient_matches_finite_differences(rng, blobs):
    model = FnnModel.initialize(9, 5, rng)
    sample = blobs[0][0]
    numeric = finite_difference(lambda x: fnn_loss(model, x, sample.label), sample.features)
    np.testing.assert_allclose(fnn_input_gradient(model, sample), numeric, atol=1e-7)


def test_training_separates_blobs(blobs):
    config = TrainConfig(batch_size=10, epochs=30, learning_rate=0.05, seed=3)
    model, history = fnn_train(blobs, config)
    assert history.best().test_accuracy >= 0.9
    assert fnn_evaluate(model, blobs[1])[1] == history.best().test_accuracy
    again, _ = fnn_train(blobs, config)
    np.testing.assert_array_equal(again.flatten(), model.flatten())


def test_adversarial_mix_counts_legitimate_accuracy(blobs):
    train, _ = blobs
    adv = train.with_samples([s.with_features(1.0 - s.features) for s in train.take(6)])
    _, history = fnn_train(blobs, TrainConfig(batch_size=10, epochs=2, adversarial_mix=0.5, seed=1), adv_set=adv)
    assert history.records[0].steps == 8
    assert history.records[0].adversarial_accuracy is not None


def test_adversarial_batches_stay_balanced_on_uneven_split(monkeypatch, blobs):
    train, _ = blobs
    adv = train.with_samples([s.with_features(s.features + 5.0) for s in train.take(6)])
    seen = []
    original = qr_fnn._backward

    def counting(model, x, labels):
        shifted = int(np.sum(x.max(axis=1) > 2.0))
        seen.append((len(labels) - shifted, shifted))
        return original(model, x, labels)

    monkeypatch.setattr(qr_fnn, "_backward", counting)
    # 40 training samples, 3 legitimate per batch
    _, history = fnn_train(blobs, TrainConfig(batch_size=6, epochs=1, adversarial_mix=0.5, seed=2), adv_set=adv)
    steps = history.records[0].steps
    assert steps == 14
    assert seen[:steps] == [(3, 3)] * steps


def test_save_and_load(tmp_path, rng):
    model = FnnModel.initialize(4, 2, rng)
    path = save_fnn(tmp_path / "fnn.json", model, metadata={"resolution": 2})
    loaded, meta = load_fnn(path)
    np.testing.assert_array_equal(loaded.flatten(), model.flatten())
    assert meta == {"resolution": 2}


def test_classifier_masks_gradient(rng, blobs):
    classifier = FnnClassifier(FnnModel.initialize(9, 5, rng))
    sample = blobs[0][1]
    masked = classifier.input_gradient(sample, [0, 4])
    assert np.count_nonzero(masked[[1, 2, 3, 5, 6, 7, 8]]) == 0
    assert classifier.output_state(sample.features) is None


def _records(values, eps=0.1):
    return [SensitivityRecord(i, 1, eps, 0.9, 0.9 - eps * s, eps * s, s, s, 0.5) for i, s in enumerate(values)]


def test_robustness_comparison_ratio():
    frame = fnn_robustness_compare(
        {"clean": _records([0.0, 0.0]), "adversarial": _records([0.0])},
        {"clean": _records([0.0, 0.0])},
        NoiseParams(100.0, 80.0, 10.0),
    )
    assert list(frame["regime"]) == ["clean"]
    assert frame["ratio"].iloc[0] == pytest.approx(1.0)
    assert frame["noisy_ratio"].iloc[0] == pytest.approx(1.0)


def test_comparison_rejects_mismatched_protocols():
    with pytest.raises(RobustnessError):
        fnn_robustness_compare({"clean": _records([1.0, 2.0])}, {"clean": _records([1.0])})
    with pytest.raises(RobustnessError):
        fnn_robustness_compare({"clean": _records([1.0])}, {"clean": _records([1.0], eps=0.2)})
    with pytest.raises(RobustnessError):
        fnn_robustness_compare({"clean": _records([1.0])}, {"adversarial": _records([1.0])})


def test_comparison_rejects_different_sample_sets():
    shifted = [replace(r, sample_id=r.sample_id + 5) for r in _records([1.0, 2.0])]
    with pytest.raises(RobustnessError) as info:
        fnn_robustness_compare({"clean": _records([1.0, 2.0])}, {"clean": shifted})
    assert "different samples" in str(info.value)


def test_fnn_goes_through_the_attack_pipeline(rng, blobs):
    classifier = FnnClassifier(FnnModel.initialize(9, 5, rng))
    sweep = attack_sweep(classifier, blobs[1].take(4), Mask.full(9), np.linspace(0.0, 0.3, 7))
    records = sensitivity_records(sweep)
    assert len(records) == 4
    assert all(r.eps_hat == 0.1 for r in records)
