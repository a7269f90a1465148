"""
QRobust Testing Framework
Independent reference implementations (oracles) and quick self-checks used by
the test suite and ``verify_implementation.py``.
"""

import math
import time
from dataclasses import dataclass, field
from datetime import datetime
from functools import reduce
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg

from qr_simulator import DensityMatrix1Q, Gate, GateKind, StateVector

# Oracles


def dense_operator(gate: Gate, num_qubits: int) -> np.ndarray:
    """Full 2^n × 2^n matrix of ``gate``; qubit q is bit q of the basis index."""
    if gate.kind is GateKind.CZ:
        a, b = gate.qubits
        index = np.arange(2**num_qubits)
        both = ((index >> a) & 1) & ((index >> b) & 1)
        return np.diag(np.where(both == 1, -1.0, 1.0).astype(np.complex128))
    factors = [np.eye(2, dtype=np.complex128)] * num_qubits
    factors[gate.qubits[0]] = gate.matrix()
    return reduce(np.kron, reversed(factors))


def dense_run(gates: Sequence[Gate], num_qubits: int) -> np.ndarray:
    psi = np.zeros(2**num_qubits, dtype=np.complex128)
    psi[0] = 1.0
    for gate in gates:
        psi = dense_operator(gate, num_qubits) @ psi
    return psi


def dense_reduced_density(amplitudes: np.ndarray, qubit: int, num_qubits: int) -> np.ndarray:
    """Partial trace of |ψ⟩⟨ψ| over every qubit except ``qubit``."""
    rho = np.outer(amplitudes, amplitudes.conj())
    # axis k of the tensor is qubit n-1-k
    tensor = rho.reshape([2] * (2 * num_qubits))
    keep = num_qubits - 1 - qubit
    for axis in reversed(range(num_qubits)):
        if axis == keep:
            continue
        tensor = np.trace(tensor, axis1=axis, axis2=axis + tensor.ndim // 2)
    return tensor.reshape(2, 2)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = linalg.eigh(0.5 * (matrix + matrix.conj().T))
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.conj().T


def sqrtm_fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """(Tr √(√ρ σ √ρ))² with both square roots taken by eigendecomposition."""
    root = _psd_sqrt(rho)
    inner = root @ sigma @ root
    values = linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    return float(np.sum(np.sqrt(np.clip(values, 0.0, None)))) ** 2


def finite_difference(func: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (func(x + e) - func(x - e)) / (2.0 * step)
    return grad


def random_state(num_qubits: int, rng: np.random.Generator) -> StateVector:
    amps = rng.normal(size=2**num_qubits) + 1j * rng.normal(size=2**num_qubits)
    return StateVector.from_amplitudes(amps, normalize=True)


def random_density_matrix(rng: np.random.Generator, rank: int = 2) -> DensityMatrix1Q:
    g = rng.normal(size=(2, rank)) + 1j * rng.normal(size=(2, rank))
    rho = g @ g.conj().T
    rho /= np.trace(rho).real
    return DensityMatrix1Q.from_matrix(0.5 * (rho + rho.conj().T))


def random_gates(num_qubits: int, count: int, rng: np.random.Generator) -> List[Gate]:
    gates = []
    for _ in range(count):
        q = int(rng.integers(num_qubits))
        kind = rng.integers(4)
        if kind == 0:
            gates.append(Gate.rx(q, rng.uniform(-math.pi, math.pi)))
        elif kind == 1:
            gates.append(Gate.rz(q, rng.uniform(-math.pi, math.pi)))
        elif kind == 2:
            gates.append(Gate.su2(q, *rng.uniform(-math.pi, math.pi, 3)))
        elif num_qubits > 1:
            other = int((q + 1 + rng.integers(num_qubits - 1)) % num_qubits)
            gates.append(Gate.cz(q, other))
    return gates


def reference_resize(image: np.ndarray, size: int) -> np.ndarray:
    """Point-by-point separable quadratic resize with edge replication."""

    def kernel(t: float) -> float:
        a = abs(t)
        if a <= 0.5:
            return 1.0 - 2.0 * a * a
        if a <= 1.5:
            return a * a - 2.5 * a + 1.5
        return 0.0

    def axis_weights(n_in: int, n_out: int, i: int) -> Dict[int, float]:
        scale = n_out / n_in
        stretch = min(scale, 1.0)
        center = (i + 0.5) / scale - 0.5
        weights: Dict[int, float] = {}
        reach = int(math.ceil(1.5 / stretch)) + 1
        for j in range(int(math.floor(center)) - reach, int(math.floor(center)) + reach + 1):
            w = kernel((center - j) * stretch)
            if w:
                src = min(max(j, 0), n_in - 1)
                weights[src] = weights.get(src, 0.0) + w
        total = sum(weights.values())
        return {k: v / total for k, v in weights.items()}

    image = np.asarray(image, dtype=np.float64)
    out = np.zeros((size, size))
    for r in range(size):
        wr = axis_weights(image.shape[0], size, r)
        for c in range(size):
            wc = axis_weights(image.shape[1], size, c)
            out[r, c] = sum(a * b * image[i, j] for i, a in wr.items() for j, b in wc.items())
    return np.clip(out, 0.0, 1.0)


# Self-checks


@dataclass
class CheckResult:
    """Outcome of one oracle comparison."""

    name: str
    passed: bool
    duration_ms: float
    max_error: Optional[float] = None
    error_message: Optional[str] = None
    timestamp: datetime = field(default_factory=datetime.now)


def _run_check(name: str, body: Callable[[], float], tolerance: float) -> CheckResult:
    start = time.perf_counter()
    try:
        error = float(body())
        return CheckResult(name, error <= tolerance, (time.perf_counter() - start) * 1000.0, error)
    except Exception as e:
        return CheckResult(name, False, (time.perf_counter() - start) * 1000.0, error_message=str(e))


class OracleChecks:
    """Implementation-vs-oracle comparisons on small random instances."""

    def __init__(self, seed: int = 7):
        self.rng = np.random.default_rng(seed)

    def statevector(self) -> CheckResult:
        from qr_simulator import apply_gates

        def body() -> float:
            n = 4
            gates = random_gates(n, 40, self.rng)
            fast = apply_gates(StateVector.zero(n), gates).amplitudes
            return float(np.max(np.abs(fast - dense_run(gates, n))))

        return _run_check("statevector vs dense operators", body, 1e-10)

    def reduced_density(self) -> CheckResult:
        from qr_simulator import reduced_density

        def body() -> float:
            n = 4
            state = random_state(n, self.rng)
            return max(
                float(np.max(np.abs(reduced_density(state, q).matrix() - dense_reduced_density(state.amplitudes, q, n))))
                for q in range(n)
            )

        return _run_check("reduced density vs dense partial trace", body, 1e-12)

    def fidelity(self) -> CheckResult:
        from qr_simulator import fidelity

        def body() -> float:
            errors = []
            for _ in range(20):
                rho, sigma = random_density_matrix(self.rng), random_density_matrix(self.rng)
                errors.append(abs(fidelity(rho, sigma) - sqrtm_fidelity(rho.matrix(), sigma.matrix())))
            return max(errors)

        return _run_check("closed-form fidelity vs sqrtm", body, 1e-10)

    def parameter_shift(self) -> CheckResult:
        from qr_circuits import build_emnist_model, cross_entropy, initial_parameters, predict
        from qr_datasets import Sample
        from qr_training import psr_gradient

        def body() -> float:
            model = build_emnist_model(4, [4, 2], 6)
            theta = initial_parameters(model, self.rng)
            sample = Sample(self.rng.uniform(0, math.pi, 6), 1, 0)

            def loss(t: np.ndarray) -> float:
                return cross_entropy(predict(model, t, sample.features).p, sample.label)

            exact = psr_gradient(model, theta, sample)
            approx = finite_difference(loss, theta)
            return float(np.max(np.abs(exact - approx)) / max(1.0, np.max(np.abs(approx))))

        return _run_check("parameter-shift vs finite differences", body, 1e-6)

    def resize(self) -> CheckResult:
        from qr_datasets import resize_image

        def body() -> float:
            image = np.zeros((28, 28))
            image[13, 9] = 1.0
            return float(np.max(np.abs(resize_image(image, 15) - reference_resize(image, 15))))

        return _run_check("quadratic resize vs pointwise reference", body, 1e-6)

    def run_all(self) -> List[CheckResult]:
        return [self.statevector(), self.reduced_density(), self.fidelity(), self.parameter_shift(), self.resize()]


def run_self_checks(seed: int = 7) -> Dict[str, Any]:
    """Run every oracle check and return a summary report."""
    results = OracleChecks(seed).run_all()
    passed = sum(1 for r in results if r.passed)
    return {
        "oracle_checks": {
            "total": len(results),
            "passed": passed,
            "failed": len(results) - passed,
            "success_rate": passed / len(results),
        },
        "results": [
            {
                "name": r.name,
                "passed": r.passed,
                "duration_ms": r.duration_ms,
                "max_error": r.max_error,
                "error": r.error_message,
            }
            for r in results
        ],
    }
