"""
QRobust Statevector Simulator Module
Dense statevector engine: gate application, expectation values, reduced
single-qubit states, finite-shot sampling and single-qubit fidelity.

Qubit q is bit q of the amplitude index (little-endian). Gate kernels act in
place on strided views of one contiguous complex128 array; when numba is
installed, large registers use compiled parallel kernels instead.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from qr_errors import SimulationError, ValidationError
from qr_logging import get_logger

logger = get_logger(__name__)

try:
    from numba import njit, prange

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False
    njit = None
    prange = range

# Compiled kernels only pay off once strided numpy passes dominate.
NUMBA_MIN_QUBITS = 14

NORM_TOLERANCE = 1e-10
HERMITIAN_TOLERANCE = 1e-12
PSD_TOLERANCE = 1e-10

_use_numba = NUMBA_AVAILABLE


def set_numba_enabled(enabled: bool) -> bool:
    """Toggle compiled kernels; returns the effective setting."""
    global _use_numba
    _use_numba = bool(enabled) and NUMBA_AVAILABLE
    if enabled and not NUMBA_AVAILABLE:
        logger.info("numba not installed, using numpy kernels")
    return _use_numba


if NUMBA_AVAILABLE:

    @njit(nogil=True, parallel=True, cache=True)
    def _kernel_1q(amps, num_qubits, target, u00, u01, u10, u11):
        stride = np.int64(1) << target
        lower = stride - 1
        half = np.int64(1) << (num_qubits - 1)
        for i in prange(half):
            i0 = ((i & ~lower) << 1) | (i & lower)
            i1 = i0 | stride
            a0 = amps[i0]
            a1 = amps[i1]
            amps[i0] = u00 * a0 + u01 * a1
            amps[i1] = u10 * a0 + u11 * a1

    @njit(nogil=True, parallel=True, cache=True)
    def _kernel_cz(amps, num_qubits, q0, q1):
        mask = (np.int64(1) << q0) | (np.int64(1) << q1)
        size = np.int64(1) << num_qubits
        for i in prange(size):
            if (i & mask) == mask:
                amps[i] = -amps[i]


class GateKind(Enum):
    RX = "rx"
    RZ = "rz"
    SU2 = "su2"
    CZ = "cz"


def rx_matrix(angle: float) -> np.ndarray:
    c = math.cos(angle / 2.0)
    s = math.sin(angle / 2.0)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)


def rz_matrix(angle: float) -> np.ndarray:
    return np.array(
        [[np.exp(-0.5j * angle), 0.0], [0.0, np.exp(0.5j * angle)]], dtype=np.complex128
    )


def su2_matrix(theta: float, phi: float, lam: float) -> np.ndarray:
    """
    Closed form of Rz(φ)·Rx(θ)·Rz(λ).

    Equal (exactly, not only up to phase) to the hardware sequence
    Rz(φ−π/2)·Rx(π/2)·Rz(π−θ)·Rx(π/2)·Rz(λ−π/2).
    """
    c = math.cos(theta / 2.0)
    s = math.sin(theta / 2.0)
    return np.array(
        [
            [np.exp(-0.5j * (phi + lam)) * c, -1j * np.exp(-0.5j * (phi - lam)) * s],
            [-1j * np.exp(0.5j * (phi - lam)) * s, np.exp(0.5j * (phi + lam)) * c],
        ],
        dtype=np.complex128,
    )


CZ_DIAGONAL = np.array([1.0, 1.0, 1.0, -1.0], dtype=np.complex128)


@dataclass(frozen=True)
class Gate:
    """One gate of a bound circuit. Angles are radians; SU2 angles are (θ, φ, λ)."""

    kind: GateKind
    qubits: Tuple[int, ...]
    angles: Tuple[float, ...] = ()

    def __post_init__(self):
        arity = 2 if self.kind is GateKind.CZ else 1
        n_angles = {GateKind.RX: 1, GateKind.RZ: 1, GateKind.SU2: 3, GateKind.CZ: 0}[self.kind]
        if len(self.qubits) != arity or len(self.angles) != n_angles:
            raise ValidationError(
                f"{self.kind.value} gate needs {arity} qubit(s) and {n_angles} angle(s)",
                field_name="gate",
                field_value=(self.qubits, self.angles),
            )
        if self.kind is GateKind.CZ and self.qubits[0] == self.qubits[1]:
            raise SimulationError("CZ control and target must differ", qubit=self.qubits[0])

    @classmethod
    def rx(cls, qubit: int, angle: float) -> "Gate":
        return cls(GateKind.RX, (qubit,), (float(angle),))

    @classmethod
    def rz(cls, qubit: int, angle: float) -> "Gate":
        return cls(GateKind.RZ, (qubit,), (float(angle),))

    @classmethod
    def su2(cls, qubit: int, theta: float, phi: float, lam: float) -> "Gate":
        return cls(GateKind.SU2, (qubit,), (float(theta), float(phi), float(lam)))

    @classmethod
    def cz(cls, a: int, b: int) -> "Gate":
        return cls(GateKind.CZ, (a, b))

    def matrix(self) -> np.ndarray:
        """2×2 unitary for single-qubit gates, 4×4 diagonal for CZ."""
        if self.kind is GateKind.RX:
            return rx_matrix(self.angles[0])
        if self.kind is GateKind.RZ:
            return rz_matrix(self.angles[0])
        if self.kind is GateKind.SU2:
            return su2_matrix(*self.angles)
        return np.diag(CZ_DIAGONAL)

    def shifted(self, position: int, delta: float) -> "Gate":
        """Copy with ``angles[position]`` increased by ``delta``."""
        angles = list(self.angles)
        angles[position] += delta
        return Gate(self.kind, self.qubits, tuple(angles))


def su2_decomposition(qubit: int, theta: float, phi: float, lam: float) -> List[Gate]:
    """Hardware-native Rz / Rx(π/2) sequence for SU2(θ, φ, λ), in application order."""
    half_pi = math.pi / 2.0
    return [
        Gate.rz(qubit, lam - half_pi),
        Gate.rx(qubit, half_pi),
        Gate.rz(qubit, math.pi - theta),
        Gate.rx(qubit, half_pi),
        Gate.rz(qubit, phi - half_pi),
    ]


@dataclass
class StateVector:
    """Dense register state; amplitude index bit q is the value of qubit q."""

    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.ndim != 1 or self.amplitudes.shape[0] != 1 << self.num_qubits:
            raise SimulationError(
                f"expected {1 << self.num_qubits} amplitudes, got {self.amplitudes.shape}",
                num_qubits=self.num_qubits,
            )

    @classmethod
    def zero(cls, num_qubits: int) -> "StateVector":
        if num_qubits < 1:
            raise SimulationError("register needs at least one qubit", num_qubits=num_qubits)
        amps = np.zeros(1 << num_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(num_qubits, amps)

    @classmethod
    def from_amplitudes(cls, amplitudes: Sequence[complex], normalize: bool = False) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=np.complex128)
        num_qubits = int(round(math.log2(amps.shape[0]))) if amps.shape[0] > 0 else 0
        if normalize:
            amps = amps / np.linalg.norm(amps)
        return cls(num_qubits, amps.copy())

    def copy(self) -> "StateVector":
        return StateVector(self.num_qubits, self.amplitudes.copy())

    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class DensityMatrix1Q:
    """Single-qubit density matrix [[ρ00, ρ01], [ρ10, ρ11]]."""

    rho00: complex
    rho01: complex
    rho10: complex
    rho11: complex

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, validate: bool = True) -> "DensityMatrix1Q":
        m = np.asarray(matrix, dtype=np.complex128)
        rho = cls(complex(m[0, 0]), complex(m[0, 1]), complex(m[1, 0]), complex(m[1, 1]))
        if validate:
            rho.validate()
        return rho

    @classmethod
    def pure(cls, alpha: complex, beta: complex) -> "DensityMatrix1Q":
        """|ψ⟩⟨ψ| for |ψ⟩ = α|0⟩ + β|1⟩ (normalised here)."""
        norm = math.sqrt(abs(alpha) ** 2 + abs(beta) ** 2)
        a, b = alpha / norm, beta / norm
        return cls(a * a.conjugate(), a * b.conjugate(), b * a.conjugate(), b * b.conjugate())

    def matrix(self) -> np.ndarray:
        return np.array([[self.rho00, self.rho01], [self.rho10, self.rho11]], dtype=np.complex128)

    def trace(self) -> float:
        return float((self.rho00 + self.rho11).real)

    def determinant(self) -> float:
        return float((self.rho00 * self.rho11 - self.rho01 * self.rho10).real)

    def eigenvalues(self) -> Tuple[float, float]:
        a = self.rho00.real
        d = self.rho11.real
        half_tr = 0.5 * (a + d)
        radius = math.sqrt(0.25 * (a - d) ** 2 + abs(self.rho01) ** 2)
        return half_tr - radius, half_tr + radius

    def validate(self, psd_tol: float = PSD_TOLERANCE) -> None:
        if abs(self.rho01 - self.rho10.conjugate()) > HERMITIAN_TOLERANCE:
            raise SimulationError("density matrix is not Hermitian", context={"rho": str(self.matrix())})
        if abs(self.rho00.imag) > HERMITIAN_TOLERANCE or abs(self.rho11.imag) > HERMITIAN_TOLERANCE:
            raise SimulationError("density matrix has complex diagonal", context={"rho": str(self.matrix())})
        if abs(self.trace() - 1.0) > NORM_TOLERANCE:
            raise SimulationError(f"density matrix trace {self.trace()} != 1")
        if self.eigenvalues()[0] < -psd_tol:
            raise SimulationError(
                f"density matrix is not positive semidefinite (min eigenvalue {self.eigenvalues()[0]:.3e})"
            )

    def sanitized(self) -> "DensityMatrix1Q":
        """Clip eigenvalues to ≥ 0 and renormalise the trace; input must already validate."""
        self.validate()
        values, vectors = np.linalg.eigh(self.matrix())
        values = np.clip(values, 0.0, None)
        values = values / values.sum()
        m = (vectors * values) @ vectors.conj().T
        # restore exact Hermiticity after the round trip
        m = 0.5 * (m + m.conj().T)
        return DensityMatrix1Q(complex(m[0, 0].real), complex(m[0, 1]), complex(m[1, 0]), complex(m[1, 1].real))

    def probability(self, outcome: int) -> float:
        return float((self.rho00 if outcome == 0 else self.rho11).real)


def _check_qubit(state: StateVector, qubit: int) -> None:
    if not 0 <= qubit < state.num_qubits:
        raise SimulationError(
            f"qubit {qubit} out of range for {state.num_qubits}-qubit register",
            qubit=qubit,
            num_qubits=state.num_qubits,
        )


def _apply_1q_numpy(amps: np.ndarray, num_qubits: int, target: int, u: np.ndarray) -> None:
    view = amps.reshape(1 << (num_qubits - target - 1), 2, 1 << target)
    a0 = view[:, 0, :].copy()
    a1 = view[:, 1, :]
    view[:, 0, :] = u[0, 0] * a0 + u[0, 1] * a1
    view[:, 1, :] = u[1, 0] * a0 + u[1, 1] * a1


def _apply_cz_numpy(amps: np.ndarray, num_qubits: int, a: int, b: int) -> None:
    lo, hi = min(a, b), max(a, b)
    view = amps.reshape(1 << (num_qubits - hi - 1), 2, 1 << (hi - lo - 1), 2, 1 << lo)
    view[:, 1, :, 1, :] *= -1.0


def apply_gate(state: StateVector, gate: Gate, inplace: bool = False) -> StateVector:
    """
    Apply one gate. Returns a new state unless ``inplace`` is set, in which
    case ``state`` is modified and returned.
    """
    for q in gate.qubits:
        _check_qubit(state, q)
    out = state if inplace else state.copy()
    n = out.num_qubits
    compiled = _use_numba and n >= NUMBA_MIN_QUBITS

    if gate.kind is GateKind.CZ:
        a, b = gate.qubits
        if compiled:
            _kernel_cz(out.amplitudes, n, a, b)
        else:
            _apply_cz_numpy(out.amplitudes, n, a, b)
        return out

    u = gate.matrix()
    target = gate.qubits[0]
    if compiled:
        _kernel_1q(out.amplitudes, n, target, u[0, 0], u[0, 1], u[1, 0], u[1, 1])
    else:
        _apply_1q_numpy(out.amplitudes, n, target, u)
    return out


def apply_gates(state: StateVector, gates: Iterable[Gate], inplace: bool = False) -> StateVector:
    out = state if inplace else state.copy()
    for gate in gates:
        apply_gate(out, gate, inplace=True)
    return out


def run_circuit(circuit, theta: Sequence[float], x: Sequence[float]) -> StateVector:
    """
    Bind ``circuit`` with (θ, x) and apply every gate to |0…0⟩.

    ``circuit`` is any object exposing ``num_qubits`` and ``bind(theta, x)``;
    state preparation stages are part of the bound gate list.
    """
    gates = circuit.bind(theta, x)
    state = StateVector.zero(circuit.num_qubits)
    return apply_gates(state, gates, inplace=True)


def _split_on(state: StateVector, qubit: int) -> Tuple[np.ndarray, np.ndarray]:
    view = state.amplitudes.reshape(1 << (state.num_qubits - qubit - 1), 2, 1 << qubit)
    return view[:, 0, :], view[:, 1, :]


def expectation_z(state: StateVector, qubit: int) -> float:
    """⟨σz⟩ on ``qubit``, exact."""
    _check_qubit(state, qubit)
    a0, a1 = _split_on(state, qubit)
    p0 = np.vdot(a0, a0).real
    p1 = np.vdot(a1, a1).real
    return float(p0 - p1)


def marginal_probability(state: StateVector, qubit: int, outcome: int = 1) -> float:
    _check_qubit(state, qubit)
    a0, a1 = _split_on(state, qubit)
    block = a1 if outcome == 1 else a0
    return float(np.vdot(block, block).real)


def expectation_pauli(state: StateVector, paulis: Dict[int, str]) -> float:
    """Expectation of a Pauli string given as {qubit: 'X' | 'Y' | 'Z' | 'I'}."""
    phi = state.copy()
    n = state.num_qubits
    for qubit, label in paulis.items():
        _check_qubit(state, qubit)
        label = label.upper()
        if label == "I":
            continue
        view = phi.amplitudes.reshape(1 << (n - qubit - 1), 2, 1 << qubit)
        if label == "Z":
            view[:, 1, :] *= -1.0
        elif label == "X":
            view[:, [0, 1], :] = view[:, [1, 0], :]
        elif label == "Y":
            a0 = view[:, 0, :].copy()
            view[:, 0, :] = -1j * view[:, 1, :]
            view[:, 1, :] = 1j * a0
        else:
            raise ValidationError(f"unknown Pauli label '{label}'", field_name="paulis")
    return float(np.vdot(state.amplitudes, phi.amplitudes).real)


def reduced_density(state: StateVector, qubit: int) -> DensityMatrix1Q:
    """Partial trace over every qubit except ``qubit``."""
    _check_qubit(state, qubit)
    a0, a1 = _split_on(state, qubit)
    rho00 = np.vdot(a0, a0).real
    rho11 = np.vdot(a1, a1).real
    rho01 = np.vdot(a1, a0)  # Σ a0·conj(a1)
    rho = DensityMatrix1Q(complex(rho00), complex(rho01), complex(rho01).conjugate(), complex(rho11))
    rho.validate()
    return rho


def sample_counts(state: StateVector, qubit: int, shots: int, rng: np.random.Generator) -> Dict[int, int]:
    """Histogram of ``shots`` measurements of ``qubit`` drawn from its exact marginal."""
    if shots < 1:
        raise ValidationError("shots must be >= 1", field_name="shots", field_value=shots)
    p1 = min(max(marginal_probability(state, qubit, 1), 0.0), 1.0)
    ones = int(rng.binomial(shots, p1))
    return {0: shots - ones, 1: ones}


def fidelity(rho: DensityMatrix1Q, sigma: DensityMatrix1Q) -> float:
    """
    Uhlmann fidelity of two single-qubit states,
    F = Tr(ρσ) + 2·sqrt(det ρ · det σ).
    """
    rho = rho.sanitized()
    sigma = sigma.sanitized()
    overlap = float(np.trace(rho.matrix() @ sigma.matrix()).real)
    det_product = max(rho.determinant(), 0.0) * max(sigma.determinant(), 0.0)
    value = overlap + 2.0 * math.sqrt(det_product)
    return min(max(value, 0.0), 1.0)


def infidelity(rho: DensityMatrix1Q, sigma: DensityMatrix1Q) -> float:
    """D = 1 − F."""
    return 1.0 - fidelity(rho, sigma)


def linear_cluster_gates(num_qubits: int) -> List[Gate]:
    """Hadamards (as SU2(π/2, π/2, π/2)) on every qubit followed by the CZ chain."""
    half_pi = math.pi / 2.0
    gates = [Gate.su2(q, half_pi, half_pi, half_pi) for q in range(num_qubits)]
    gates.extend(Gate.cz(q, q + 1) for q in range(num_qubits - 1))
    return gates
