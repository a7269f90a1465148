"""Readout-noise emulation and iterative Bayesian unfolding tests."""

import numpy as np
import pytest

from qr_errors import MitigationError, ValidationError
from qr_mitigation import (
    AssignmentMatrix,
    apply_readout_noise,
    counts_to_distribution,
    estimate_output_probability,
    ibu_correct,
    total_variation,
)


def test_single_qubit_matrix_rows():
    r = AssignmentMatrix.single(0.97, 0.92)
    np.testing.assert_allclose(r.matrix, [[0.97, 0.03], [0.08, 0.92]])
    np.testing.assert_allclose(r.forward([0.25, 0.75]), [0.25 * 0.97 + 0.75 * 0.08, 0.25 * 0.03 + 0.75 * 0.92])


def test_assignment_validation():
    with pytest.raises(ValidationError):
        AssignmentMatrix.single(1.2, 0.9)
    with pytest.raises(ValidationError):
        AssignmentMatrix(np.array([[0.9, 0.2], [0.1, 0.9]]), 1)
    with pytest.raises(ValidationError):
        AssignmentMatrix(np.eye(2), 2)
    with pytest.raises(ValidationError):
        AssignmentMatrix.from_fidelities([])


def test_tensor_product_uses_msb_for_first_qubit():
    r = AssignmentMatrix.from_fidelities([(1.0, 1.0), (0.9, 0.8)])
    assert r.size == 4
    # first qubit is perfect, so no weight crosses the 0x/1x halves
    assert r.matrix[0, 2] == 0.0 and r.matrix[1, 3] == 0.0
    assert r.matrix[0, 1] == pytest.approx(0.1)


def test_ibu_recovers_exact_distribution(rng):
    r = AssignmentMatrix.from_fidelities([(0.95, 0.9), (0.97, 0.93), (0.9, 0.85)])
    truth = rng.dirichlet(np.ones(8))
    measured = r.forward(truth)
    result = ibu_correct(measured, r, max_iter=2000, tolerance=1e-13)
    assert total_variation(result.distribution, truth) < 0.1 * total_variation(measured, truth)
    assert result.distribution.sum() == pytest.approx(1.0)


def test_ibu_improves_sampled_estimate(rng):
    r = AssignmentMatrix.from_fidelities([(0.9, 0.85), (0.92, 0.88)])
    truth = np.array([0.6, 0.1, 0.05, 0.25])
    counts = apply_readout_noise(truth, r, 200000, rng)
    measured = counts_to_distribution(counts)
    corrected = ibu_correct(measured, r, max_iter=200).distribution
    assert total_variation(corrected, truth) < total_variation(measured, truth)


def test_ibu_stops_on_tolerance():
    r = AssignmentMatrix.single(0.95, 0.9)
    result = ibu_correct(r.forward([0.7, 0.3]), r, max_iter=5000, tolerance=1e-12)
    assert result.converged
    assert result.iterations < 5000
    fixed = ibu_correct([0.5, 0.5], r, max_iter=3)
    assert fixed.iterations == 3 and not fixed.converged


def test_ibu_zero_denominator_is_reported():
    r = AssignmentMatrix(np.array([[1.0, 0.0], [1.0, 0.0]]), 1)
    with pytest.raises(MitigationError):
        ibu_correct([0.0, 1.0], r)


def test_ibu_input_checks():
    r = AssignmentMatrix.single(0.9, 0.9)
    with pytest.raises(ValidationError):
        ibu_correct([0.5, 0.6], r)
    with pytest.raises(ValidationError):
        ibu_correct([0.25, 0.25, 0.25, 0.25], r)


def test_counts_and_shots_checks(rng):
    with pytest.raises(ValidationError):
        counts_to_distribution([0, 0])
    with pytest.raises(ValidationError):
        apply_readout_noise([1.0, 0.0], AssignmentMatrix.single(0.9, 0.9), 0, rng)


def test_output_probability_pipeline_is_seeded():
    r = AssignmentMatrix.single(0.97, 0.92)
    a = estimate_output_probability(0.8, r, 50000, np.random.default_rng(4))
    b = estimate_output_probability(0.8, r, 50000, np.random.default_rng(4))
    assert a.to_dict() == b.to_dict()
    assert a.noisy == pytest.approx(0.8 * 0.97 + 0.2 * 0.08)
    assert abs(a.corrected - 0.8) < abs(a.measured - 0.8) + 0.01
    with pytest.raises(ValidationError):
        estimate_output_probability(0.8, AssignmentMatrix.from_fidelities([(0.9, 0.9)] * 2), 10, np.random.default_rng(0))
