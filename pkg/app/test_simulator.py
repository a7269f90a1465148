"""Statevector simulator tests against dense-operator oracles."""

import math

import numpy as np
import pytest

from qr_errors import SimulationError, ValidationError
from qr_simulator import (
    DensityMatrix1Q,
    Gate,
    StateVector,
    apply_gate,
    apply_gates,
    expectation_pauli,
    expectation_z,
    fidelity,
    infidelity,
    linear_cluster_gates,
    marginal_probability,
    reduced_density,
    sample_counts,
    set_numba_enabled,
    su2_decomposition,
    su2_matrix,
)
from qr_testing import (
    dense_reduced_density,
    dense_run,
    random_density_matrix,
    random_gates,
    random_state,
    sqrtm_fidelity,
)


def _equal_up_to_phase(a: np.ndarray, b: np.ndarray) -> bool:
    k = np.argmax(np.abs(b))
    phase = a.flat[k] / b.flat[k]
    return np.allclose(a, phase * b, atol=1e-12)


def test_zero_state_and_norm():
    state = StateVector.zero(3)
    assert state.amplitudes[0] == 1.0
    assert state.norm() == pytest.approx(1.0)
    assert expectation_z(state, 1) == pytest.approx(1.0)


def test_amplitude_count_is_checked():
    with pytest.raises(SimulationError):
        StateVector(2, np.zeros(3))


@pytest.mark.parametrize("num_qubits", [1, 2, 4, 5])
def test_random_circuits_match_dense_operators(num_qubits, rng):
    gates = random_gates(num_qubits, 30, rng)
    fast = apply_gates(StateVector.zero(num_qubits), gates).amplitudes
    np.testing.assert_allclose(fast, dense_run(gates, num_qubits), atol=1e-10)


def test_apply_gate_copies_unless_inplace():
    state = StateVector.zero(2)
    out = apply_gate(state, Gate.rx(0, 0.7))
    assert state.amplitudes[0] == 1.0
    assert out is not state
    same = apply_gate(state, Gate.rx(0, 0.7), inplace=True)
    assert same is state
    np.testing.assert_allclose(state.amplitudes, out.amplitudes)


def test_qubit_zero_is_least_significant_bit():
    state = apply_gate(StateVector.zero(3), Gate.rx(0, math.pi))
    assert abs(state.amplitudes[1]) == pytest.approx(1.0)
    assert marginal_probability(state, 0, 1) == pytest.approx(1.0)
    assert marginal_probability(state, 2, 1) == pytest.approx(0.0)


def test_cz_flips_sign_of_both_set():
    amps = np.full(4, 0.5, dtype=complex)
    state = apply_gate(StateVector(2, amps), Gate.cz(0, 1))
    np.testing.assert_allclose(state.amplitudes, [0.5, 0.5, 0.5, -0.5])


def test_cz_rejects_equal_qubits():
    with pytest.raises(SimulationError):
        Gate.cz(1, 1)


def test_gate_arity_is_validated():
    from qr_simulator import GateKind

    with pytest.raises(ValidationError):
        Gate(GateKind.RX, (0,), (0.1, 0.2))


def test_out_of_range_qubit():
    with pytest.raises(SimulationError):
        apply_gate(StateVector.zero(2), Gate.rx(2, 0.1))


def test_su2_is_rz_rx_rz():
    theta, phi, lam = 0.3, -1.1, 2.2
    expected = Gate.rz(0, phi).matrix() @ Gate.rx(0, theta).matrix() @ Gate.rz(0, lam).matrix()
    np.testing.assert_allclose(su2_matrix(theta, phi, lam), expected, atol=1e-12)


def test_su2_decomposition_matches_closed_form(rng):
    for _ in range(20):
        theta, phi, lam = rng.uniform(-math.pi, math.pi, 3)
        product = np.eye(2, dtype=complex)
        for gate in su2_decomposition(0, theta, phi, lam):
            product = gate.matrix() @ product
        assert _equal_up_to_phase(product, su2_matrix(theta, phi, lam))


def test_shifted_gate_changes_one_angle():
    gate = Gate.su2(0, 0.1, 0.2, 0.3)
    shifted = gate.shifted(1, math.pi / 2)
    assert shifted.angles == pytest.approx((0.1, 0.2 + math.pi / 2, 0.3))
    assert gate.angles == (0.1, 0.2, 0.3)


def test_reduced_density_matches_partial_trace(rng):
    n = 5
    for _ in range(5):
        state = random_state(n, rng)
        for q in range(n):
            np.testing.assert_allclose(
                reduced_density(state, q).matrix(), dense_reduced_density(state.amplitudes, q, n), atol=1e-12
            )


def test_expectation_z_agrees_with_reduced_density(rng):
    state = random_state(4, rng)
    rho = reduced_density(state, 2)
    assert expectation_z(state, 2) == pytest.approx((rho.rho00 - rho.rho11).real, abs=1e-12)


def test_linear_cluster_stabilizers():
    n = 20
    state = apply_gates(StateVector.zero(n), linear_cluster_gates(n))
    for i in range(1, n - 1):
        assert expectation_pauli(state, {i - 1: "Z", i: "X", i + 1: "Z"}) == pytest.approx(1.0, abs=1e-10)
    assert expectation_pauli(state, {0: "X", 1: "Z"}) == pytest.approx(1.0, abs=1e-10)
    assert expectation_pauli(state, {n - 2: "Z", n - 1: "X"}) == pytest.approx(1.0, abs=1e-10)


def test_unknown_pauli_label():
    with pytest.raises(ValidationError):
        expectation_pauli(StateVector.zero(1), {0: "Q"})


def test_sample_counts_is_seeded():
    state = apply_gate(StateVector.zero(1), Gate.rx(0, math.pi / 2))
    a = sample_counts(state, 0, 1000, np.random.default_rng(3))
    b = sample_counts(state, 0, 1000, np.random.default_rng(3))
    assert a == b
    assert a[0] + a[1] == 1000
    with pytest.raises(ValidationError):
        sample_counts(state, 0, 0, np.random.default_rng(3))


def test_fidelity_closed_form_matches_sqrtm(rng):
    errors = []
    for _ in range(1000):
        rho, sigma = random_density_matrix(rng), random_density_matrix(rng)
        errors.append(abs(fidelity(rho, sigma) - sqrtm_fidelity(rho.matrix(), sigma.matrix())))
    assert max(errors) < 1e-10


def test_fidelity_of_pure_states_is_overlap():
    a = DensityMatrix1Q.pure(1.0, 0.0)
    b = DensityMatrix1Q.pure(math.cos(0.4), math.sin(0.4))
    assert fidelity(a, b) == pytest.approx(math.cos(0.4) ** 2, abs=1e-12)
    assert infidelity(a, a) == pytest.approx(0.0, abs=1e-12)
    assert fidelity(a, DensityMatrix1Q.pure(0.0, 1.0)) == pytest.approx(0.0, abs=1e-12)


def test_density_matrix_validation():
    with pytest.raises(SimulationError):
        DensityMatrix1Q.from_matrix(np.array([[1.2, 0.0], [0.0, -0.2]]))
    with pytest.raises(SimulationError):
        DensityMatrix1Q.from_matrix(np.array([[0.5, 0.4], [0.1, 0.5]]))


def test_numba_toggle_reports_effective_setting():
    from qr_simulator import NUMBA_AVAILABLE

    assert set_numba_enabled(False) is False
    assert set_numba_enabled(True) is NUMBA_AVAILABLE
    set_numba_enabled(False)


@pytest.mark.skipif(not __import__("qr_simulator").NUMBA_AVAILABLE, reason="numba not installed")
def test_compiled_kernels_match_numpy(rng):
    n = 14
    gates = random_gates(n, 12, rng)
    set_numba_enabled(False)
    reference = apply_gates(StateVector.zero(n), gates).amplitudes
    set_numba_enabled(True)
    try:
        compiled = apply_gates(StateVector.zero(n), gates).amplitudes
    finally:
        set_numba_enabled(False)
    np.testing.assert_allclose(compiled, reference, atol=1e-10)
