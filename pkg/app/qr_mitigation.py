"""
QRobust Readout Mitigation Module
Assignment-matrix readout noise, finite-shot sampling and iterative Bayesian
unfolding.
"""

from dataclasses import dataclass
from functools import reduce
from typing import Any, Dict, Optional, Sequence

import numpy as np

from qr_errors import MitigationError, ValidationError
from qr_logging import get_logger

logger = get_logger(__name__)

SIMPLEX_TOLERANCE = 1e-10
ROW_TOLERANCE = 1e-12


def check_simplex(p: Sequence[float], name: str = "distribution") -> np.ndarray:
    v = np.asarray(p, dtype=np.float64)
    if v.ndim != 1 or np.any(v < -SIMPLEX_TOLERANCE) or abs(v.sum() - 1.0) > SIMPLEX_TOLERANCE:
        raise ValidationError(f"{name} is not a probability vector", field_name=name, field_value=v.tolist())
    return v


@dataclass(frozen=True, eq=False)
class AssignmentMatrix:
    """
    Row-stochastic readout matrix, ``matrix[prepared, measured]`` over
    bitstrings of ``num_qubits`` qubits (qubit 0 is the most significant bit).
    """

    matrix: np.ndarray
    num_qubits: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        size = 2**self.num_qubits
        if m.shape != (size, size):
            raise ValidationError(f"assignment matrix must be {size}×{size}", field_name="matrix", field_value=m.shape)
        if np.any(m < 0) or np.any(m > 1) or np.any(np.abs(m.sum(axis=1) - 1.0) > ROW_TOLERANCE):
            raise ValidationError("assignment matrix must be row-stochastic", field_name="matrix")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def single(cls, fidelity0: float, fidelity1: float) -> "AssignmentMatrix":
        for name, f in (("fidelity0", fidelity0), ("fidelity1", fidelity1)):
            if not 0.0 <= f <= 1.0:
                raise ValidationError("readout fidelity must lie in [0, 1]", field_name=name, field_value=f)
        return cls(np.array([[fidelity0, 1.0 - fidelity0], [1.0 - fidelity1, fidelity1]]), 1)

    @classmethod
    def from_fidelities(cls, fidelities: Sequence[Sequence[float]]) -> "AssignmentMatrix":
        """Tensor product of per-qubit matrices from (F0, F1) pairs; no crosstalk."""
        blocks = [cls.single(f0, f1).matrix for f0, f1 in fidelities]
        if not blocks:
            raise ValidationError("at least one qubit is required", field_name="fidelities")
        return cls(reduce(np.kron, blocks), len(blocks))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def forward(self, true_dist: Sequence[float]) -> np.ndarray:
        """Measured distribution Rᵀ·v."""
        return self.matrix.T @ check_simplex(true_dist, "true_dist")

    def to_dict(self) -> Dict[str, Any]:
        return {"num_qubits": self.num_qubits, "matrix": self.matrix.tolist()}


def apply_readout_noise(
    true_dist: Sequence[float], assignment: AssignmentMatrix, shots: int, rng: np.random.Generator
) -> np.ndarray:
    """Multinomial counts drawn from the readout-corrupted distribution."""
    if shots < 1:
        raise ValidationError("shots must be >= 1", field_name="shots", field_value=shots)
    measured = np.clip(assignment.forward(true_dist), 0.0, None)
    return rng.multinomial(shots, measured / measured.sum())


def counts_to_distribution(counts: Sequence[int]) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValidationError("counts must contain at least one shot", field_name="counts")
    return counts / total


@dataclass
class UnfoldingResult:
    distribution: np.ndarray
    iterations: int
    delta: float
    converged: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "distribution": self.distribution.tolist(),
            "iterations": self.iterations,
            "delta": self.delta,
            "converged": self.converged,
        }


def ibu_correct(
    w: Sequence[float],
    assignment: AssignmentMatrix,
    max_iter: int = 50,
    prior: Optional[Sequence[float]] = None,
    tolerance: float = 0.0,
) -> UnfoldingResult:
    """
    Iterative Bayesian unfolding:
    v_j ← v_j · Σ_i R[j, i]·w_i / (Σ_k R[k, i]·v_k), starting from a uniform prior.
    Stops after ``max_iter`` iterations or once the l1 change drops to ``tolerance``.
    """
    w = check_simplex(w, "w")
    r = assignment.matrix
    if w.size != assignment.size:
        raise ValidationError("w and the assignment matrix disagree in size", field_name="w")
    v = np.full(w.size, 1.0 / w.size) if prior is None else check_simplex(prior, "prior").copy()

    delta = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        predicted = r.T @ v
        degenerate = (predicted <= 0.0) & (w > 0.0)
        if np.any(degenerate):
            raise MitigationError(
                "unfolding denominator vanished for an observed outcome",
                context={"outcomes": np.flatnonzero(degenerate).tolist(), "iteration": iterations},
            )
        ratio = np.divide(w, predicted, out=np.zeros_like(w), where=predicted > 0.0)
        updated = v * (r @ ratio)
        updated /= updated.sum()
        delta = float(np.abs(updated - v).sum())
        v = updated
        if delta <= tolerance:
            break
    return UnfoldingResult(distribution=v, iterations=iterations, delta=delta, converged=delta <= tolerance)


def total_variation(p: Sequence[float], q: Sequence[float]) -> float:
    return 0.5 * float(np.abs(np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)).sum())


@dataclass
class ReadoutEstimate:
    """Label-1 (outcome 0) probability through the readout pipeline."""

    exact: float
    noisy: float
    measured: float
    corrected: float
    unfolding: UnfoldingResult

    def to_dict(self) -> Dict[str, Any]:
        return {
            "exact": self.exact,
            "noisy": self.noisy,
            "measured": self.measured,
            "corrected": self.corrected,
            "iterations": self.unfolding.iterations,
            "delta": self.unfolding.delta,
        }


def estimate_output_probability(
    p_exact: float,
    assignment: AssignmentMatrix,
    shots: int,
    rng: np.random.Generator,
    max_iter: int = 50,
    tolerance: float = 0.0,
) -> ReadoutEstimate:
    """exact p → assignment noise → ``shots`` samples → IBU-corrected p, for one qubit."""
    if assignment.num_qubits != 1:
        raise ValidationError("output-probability pipeline is single-qubit", field_name="assignment")
    true_dist = np.array([p_exact, 1.0 - p_exact])
    counts = apply_readout_noise(true_dist, assignment, shots, rng)
    w = counts_to_distribution(counts)
    unfolded = ibu_correct(w, assignment, max_iter=max_iter, tolerance=tolerance)
    return ReadoutEstimate(
        exact=p_exact,
        noisy=float(assignment.forward(true_dist)[0]),
        measured=float(w[0]),
        corrected=float(unfolded.distribution[0]),
        unfolding=unfolded,
    )
