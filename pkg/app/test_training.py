"""Gradient, optimiser and training-loop tests."""

import math

import numpy as np
import pytest

import qr_training
from qr_circuits import cross_entropy, initial_parameters, predict
from qr_datasets import Sample
from qr_errors import TrainingError, ValidationError
from qr_testing import finite_difference
from qr_training import (
    AdamState,
    GradientOptions,
    TrainConfig,
    TrainHistory,
    adam_step,
    evaluate,
    input_loss_gradient,
    load_checkpoint,
    loss_and_gradient,
    parameter_shift_derivatives,
    psr_gradient,
    regularizer_terms,
    save_checkpoint,
    train_adversarial,
    train_clean,
)


def _loss(model, features, label):
    return lambda theta: cross_entropy(predict(model, theta, features).p, label)


def test_psr_matches_finite_differences(small_emnist_model, random_theta, angle_sample):
    analytic = psr_gradient(small_emnist_model, random_theta, angle_sample)
    numeric = finite_difference(_loss(small_emnist_model, angle_sample.features, angle_sample.label), random_theta)
    np.testing.assert_allclose(analytic, numeric, atol=1e-6)


def test_psr_on_lcei_model(small_lcei_model, lcei_splits, rng):
    theta = initial_parameters(small_lcei_model, rng)
    sample = lcei_splits[0][3]
    analytic = psr_gradient(small_lcei_model, theta, sample)
    numeric = finite_difference(_loss(small_lcei_model, sample.features, sample.label), theta)
    np.testing.assert_allclose(analytic, numeric, atol=1e-6)


def test_prefix_cache_budget_does_not_change_gradients(small_emnist_model, random_theta, angle_sample):
    slots = small_emnist_model.circuit.trainable_slots()
    cached = parameter_shift_derivatives(small_emnist_model, random_theta, angle_sample.features, slots)
    uncached = parameter_shift_derivatives(
        small_emnist_model, random_theta, angle_sample.features, slots, GradientOptions(cache_limit_mb=0)
    )
    assert cached[0] == pytest.approx(uncached[0])
    np.testing.assert_allclose(cached[1], uncached[1], atol=1e-12)


def test_input_gradient_matches_finite_differences(small_emnist_model, random_theta, angle_sample):
    gradient = input_loss_gradient(small_emnist_model, random_theta, angle_sample)

    def by_features(x):
        return cross_entropy(predict(small_emnist_model, random_theta, x).p, angle_sample.label)

    np.testing.assert_allclose(gradient, finite_difference(by_features, angle_sample.features), atol=1e-6)


def test_input_gradient_subset_leaves_zeros(small_emnist_model, random_theta, angle_sample):
    full = input_loss_gradient(small_emnist_model, random_theta, angle_sample)
    partial = input_loss_gradient(small_emnist_model, random_theta, angle_sample, indices=[1, 4])
    np.testing.assert_allclose(partial[[1, 4]], full[[1, 4]], atol=1e-12)
    assert np.all(partial[[0, 2, 3, 5]] == 0.0)


def test_finite_shot_gradient_needs_rng(small_emnist_model, random_theta, angle_sample):
    with pytest.raises(ValidationError):
        loss_and_gradient(small_emnist_model, random_theta, angle_sample, GradientOptions(shots=100))


def test_finite_shot_gradient_approaches_exact(small_emnist_model, random_theta, angle_sample):
    exact = psr_gradient(small_emnist_model, random_theta, angle_sample)
    noisy = psr_gradient(
        small_emnist_model, random_theta, angle_sample, GradientOptions(shots=20000), np.random.default_rng(9)
    )
    assert np.max(np.abs(noisy - exact)) < 0.1 * max(1.0, np.max(np.abs(exact)))


def test_regularizer_residual_is_second_order(small_emnist_model, random_theta, angle_sample, rng):
    direction = rng.normal(size=6)
    small = regularizer_terms(small_emnist_model, random_theta, angle_sample, 1e-3 * direction)
    large = regularizer_terms(small_emnist_model, random_theta, angle_sample, 1e-2 * direction)
    assert abs(small.residual) < abs(large.residual) / 20.0


def test_adam_first_step_moves_by_learning_rate():
    state = AdamState.zeros(3, learning_rate=0.1)
    theta, new_state = adam_step(state, np.zeros(3), np.array([2.0, -0.5, 0.0]))
    np.testing.assert_allclose(theta, [-0.1, 0.1, 0.0], atol=1e-6)
    assert new_state.t == 1 and state.t == 0
    assert np.all(state.m == 0.0)


def test_adam_rejects_shape_mismatch():
    with pytest.raises(ValidationError):
        adam_step(AdamState.zeros(3), np.zeros(2), np.zeros(3))


def test_adam_state_serialises():
    state = AdamState(m=np.array([0.1, 0.2]), v=np.array([0.3, 0.4]), t=7, learning_rate=0.05)
    restored = AdamState.from_dict(state.to_dict())
    np.testing.assert_array_equal(restored.m, state.m)
    assert restored.t == 7 and restored.learning_rate == 0.05


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValidationError):
        TrainConfig(adversarial_mix=1.5)


def _config(**overrides):
    values = dict(batch_size=8, epochs=3, learning_rate=0.1, seed=4)
    values.update(overrides)
    return TrainConfig(**values)


def test_clean_training_is_reproducible(small_lcei_model, lcei_splits):
    theta_a, history_a = train_clean(small_lcei_model, lcei_splits, _config())
    theta_b, history_b = train_clean(small_lcei_model, lcei_splits, _config())
    np.testing.assert_array_equal(theta_a, theta_b)
    assert history_a.losses == history_b.losses
    assert len(history_a) == 3
    assert all(r.steps == 2 for r in history_a.records)


def test_best_epoch_has_best_test_accuracy(small_lcei_model, lcei_splits):
    theta, history = train_clean(small_lcei_model, lcei_splits, _config())
    best = history.best()
    assert best.test_accuracy == max(history.test_accuracy)
    assert evaluate(small_lcei_model, theta, lcei_splits[1])[1] == pytest.approx(best.test_accuracy)


def test_resume_matches_uninterrupted_run(tmp_path, small_lcei_model, lcei_splits):
    full_theta, full_history = train_clean(small_lcei_model, lcei_splits, _config())

    saved = []

    def keep_first(checkpoint):
        if checkpoint.next_epoch == 1:
            saved.append(save_checkpoint(tmp_path / "ckpt.json", checkpoint))

    train_clean(small_lcei_model, lcei_splits, _config(epochs=1), on_epoch=keep_first)
    resume = load_checkpoint(saved[0])
    resumed_theta, resumed_history = train_clean(small_lcei_model, lcei_splits, _config(), resume=resume)

    np.testing.assert_allclose(resumed_theta, full_theta, atol=1e-12)
    assert resumed_history.losses == pytest.approx(full_history.losses, abs=1e-12)
    assert resumed_history.best_epoch == full_history.best_epoch


def test_non_finite_parameters_stop_training(small_lcei_model, lcei_splits):
    init = np.full(small_lcei_model.num_params, np.nan)
    with pytest.raises(TrainingError) as info:
        train_clean(small_lcei_model, lcei_splits, _config(epochs=1), init_theta=init)
    assert info.value.context["batch_ids"]


def test_adversarial_training_mixes_batches(small_lcei_model, lcei_splits):
    train, _ = lcei_splits
    adv = train.with_samples([s.with_features(np.clip(s.features + 0.2, 0.0, math.pi)) for s in train.take(4)])
    _, history = train_adversarial(small_lcei_model, lcei_splits, adv, _config(epochs=2, adversarial_mix=0.5))
    assert all(r.adversarial_accuracy is not None for r in history.records)
    # 4 legitimate samples per batch over 16 training samples
    assert history.records[0].steps == 4


def test_every_mixed_batch_is_half_adversarial(monkeypatch, small_lcei_model, lcei_splits):
    train, _ = lcei_splits
    adv = train.with_samples(
        [Sample(np.clip(s.features + 0.2, 0.0, math.pi), s.label, 1000 + s.sample_id) for s in train.take(4)]
    )
    calls = []
    original = qr_training._map

    def recording(func, items, workers):
        calls.append((sum(s.sample_id < 1000 for s in items), sum(s.sample_id >= 1000 for s in items)))
        return original(func, items, workers)

    monkeypatch.setattr(qr_training, "_map", recording)
    # 16 training samples do not divide into batches of 3 legitimate samples
    config = _config(epochs=1, batch_size=6, adversarial_mix=0.5)
    _, history = train_adversarial(small_lcei_model, lcei_splits, adv, config)
    steps = history.records[0].steps
    assert steps == 6
    assert calls[:steps] == [(3, 3)] * steps


def test_zero_mix_reduces_to_clean_training(small_lcei_model, lcei_splits):
    train, _ = lcei_splits
    adv = train.with_samples([s.with_features(np.clip(s.features + 0.2, 0.0, math.pi)) for s in train.take(4)])
    clean_theta, clean_history = train_clean(small_lcei_model, lcei_splits, _config())
    mixed_theta, mixed_history = train_adversarial(
        small_lcei_model, lcei_splits, adv, _config(adversarial_mix=0.0)
    )
    np.testing.assert_array_equal(mixed_theta, clean_theta)
    assert mixed_history.losses == clean_history.losses
    assert mixed_history.test_accuracy == clean_history.test_accuracy


def test_adversarial_training_needs_samples(small_lcei_model, lcei_splits):
    empty = lcei_splits[0].with_samples([])
    with pytest.raises(TrainingError):
        train_adversarial(small_lcei_model, lcei_splits, empty, _config())


def test_history_round_trip_and_frame(small_lcei_model, lcei_splits):
    _, history = train_clean(small_lcei_model, lcei_splits, _config(epochs=2))
    restored = TrainHistory.from_dict(history.to_dict())
    assert restored.losses == history.losses
    frame = history.to_frame()
    assert list(frame["epoch"]) == [0, 1]
    assert frame["best"].sum() == 1


def test_parallel_workers_give_same_result(small_lcei_model, lcei_splits):
    serial, _ = train_clean(small_lcei_model, lcei_splits, _config(epochs=1))
    parallel, _ = train_clean(small_lcei_model, lcei_splits, _config(epochs=1, workers=3))
    np.testing.assert_allclose(serial, parallel, atol=1e-12)

