"""Circuit construction, prediction and model persistence tests."""

import math

import numpy as np
import pytest

from qr_circuits import (
    Circuit,
    Instruction,
    ParameterBinding,
    SlotRole,
    Task,
    block_span,
    brickwork_pairs,
    build_cluster_circuit,
    build_emnist_model,
    build_lcei_model,
    build_model,
    cross_entropy,
    cross_entropy_derivative,
    final_state,
    initial_parameters,
    load_model,
    predict,
    save_model,
)
from qr_errors import CircuitError, ValidationError
from qr_simulator import GateKind, expectation_pauli, expectation_z, run_circuit


def test_block_span_is_centred_on_output_qubit():
    assert list(block_span(20, 4)) == [8, 9, 10, 11]
    assert list(block_span(20, 20)) == list(range(20))
    assert list(block_span(12, 6)) == [3, 4, 5, 6, 7, 8]


def test_brickwork_pairs_cover_both_layers():
    assert brickwork_pairs(range(4)) == [(0, 1), (2, 3), (1, 2)]
    assert brickwork_pairs(range(2, 5)) == [(2, 3), (3, 4)]


def test_paper_scale_parameter_counts():
    emnist = build_emnist_model(20, [20, 16, 12, 8, 4], 169)
    assert emnist.num_params == 3 * 60 + 1
    assert emnist.encoded_count == 169
    assert emnist.output_qubit == 10
    lcei = build_lcei_model(20, [20, 16, 12, 8, 4])
    assert lcei.num_params == 181
    assert lcei.data_only_count == 20
    assert lcei.encoded_count == 0


def test_small_model_layout(small_emnist_model):
    model = small_emnist_model
    assert model.num_params == 19
    assert model.num_features == 6
    assert model.circuit.instructions[-1].kind is GateKind.RX
    assert model.circuit.instructions[-1].qubits == (2,)
    assert len(model.circuit.trainable_slots()) == 19
    assert len(model.circuit.data_slots()) == 6


def test_encoded_slots_add_theta_and_x(small_emnist_model, rng):
    model = small_emnist_model
    theta = rng.uniform(-1, 1, model.num_params)
    x = rng.uniform(0, 1, model.num_features)
    gates = model.circuit.bind(theta, x)
    locations = model.circuit.slot_locations()
    for slot in model.circuit.slots():
        k, pos = locations[slot.slot_id]
        expected = theta[slot.trainable_index]
        if slot.role is SlotRole.ENCODED:
            expected += x[slot.data_index]
        assert gates[k].angles[pos] == pytest.approx(expected)


def test_too_many_features_is_rejected():
    with pytest.raises(CircuitError):
        build_emnist_model(2, [2], 7)


def test_block_sizes_must_be_nonincreasing():
    with pytest.raises(CircuitError):
        build_emnist_model(4, [2, 4], 3)


def test_duplicate_trainable_binding_is_rejected():
    a = ParameterBinding(0, SlotRole.TRAINABLE, trainable_index=0)
    b = ParameterBinding(1, SlotRole.TRAINABLE, trainable_index=0)
    with pytest.raises(CircuitError):
        Circuit(1, (Instruction(GateKind.RX, (0,), (a,)), Instruction(GateKind.RX, (0,), (b,))), 1, 0)


def test_bind_checks_shapes(small_emnist_model):
    with pytest.raises(ValidationError):
        small_emnist_model.circuit.bind(np.zeros(3), np.zeros(6))
    with pytest.raises(ValidationError):
        small_emnist_model.circuit.bind(np.zeros(19), np.zeros(5))


def test_cluster_circuit_prepares_cluster_state():
    circuit = build_cluster_circuit(6)
    state = run_circuit(circuit, [], [])
    for i in range(1, 5):
        assert expectation_pauli(state, {i - 1: "Z", i: "X", i + 1: "Z"}) == pytest.approx(1.0, abs=1e-10)


def test_prediction_probability_from_expectation(small_emnist_model, random_theta, angle_sample):
    model = small_emnist_model
    prediction = predict(model, random_theta, angle_sample.features)
    state = final_state(model, random_theta, angle_sample.features)
    assert prediction.p == pytest.approx(0.5 * (expectation_z(state, model.output_qubit) + 1.0))
    assert prediction.label_hat == int(prediction.p > 0.5)
    assert prediction.correct_probability(0) == pytest.approx(1.0 - prediction.p)


def test_finite_shot_prediction_needs_rng(small_emnist_model, random_theta, angle_sample):
    with pytest.raises(ValidationError):
        predict(small_emnist_model, random_theta, angle_sample.features, shots=100)
    a = predict(small_emnist_model, random_theta, angle_sample.features, 500, np.random.default_rng(1))
    b = predict(small_emnist_model, random_theta, angle_sample.features, 500, np.random.default_rng(1))
    assert a.p == b.p
    assert (a.p * 500) == pytest.approx(round(a.p * 500))


def test_lcei_excitation_changes_final_state(small_lcei_model, rng):
    theta = initial_parameters(small_lcei_model, rng)
    low = final_state(small_lcei_model, theta, np.zeros(4)).amplitudes
    high = final_state(small_lcei_model, theta, np.full(4, math.pi)).amplitudes
    assert not np.allclose(low, high)
    assert 0.0 <= predict(small_lcei_model, theta, np.full(4, math.pi)).p <= 1.0


def test_cross_entropy_and_derivative():
    assert cross_entropy(0.8, 1) == pytest.approx(-math.log(0.8))
    assert cross_entropy(0.8, 0) == pytest.approx(-math.log(0.2))
    assert cross_entropy(1.0, 0) < 30.0
    h = 1e-6
    for label in (0, 1):
        numeric = (cross_entropy(0.3 + h, label) - cross_entropy(0.3 - h, label)) / (2 * h)
        assert cross_entropy_derivative(0.3, label) == pytest.approx(numeric, rel=1e-6)


def test_initial_parameters_range(small_emnist_model, rng):
    theta = initial_parameters(small_emnist_model, rng, scale=0.5)
    assert theta.shape == (19,)
    assert np.all(np.abs(theta) <= 0.5)


def test_build_model_dispatch():
    assert build_model("lcei", 4, [4, 2]).task is Task.LCEI
    assert build_model(Task.EMNIST, 4, [4], 3).num_features == 3


def test_model_save_and_load(tmp_path, small_lcei_model, rng, lcei_splits):
    theta = initial_parameters(small_lcei_model, rng)
    path = save_model(tmp_path / "model.json", small_lcei_model, theta, {"note": "x"})
    model, loaded, meta = load_model(path)
    assert meta == {"note": "x"}
    np.testing.assert_array_equal(loaded, theta)
    sample = lcei_splits[0][0]
    assert predict(model, loaded, sample.features).p == pytest.approx(
        predict(small_lcei_model, theta, sample.features).p, abs=1e-14
    )
