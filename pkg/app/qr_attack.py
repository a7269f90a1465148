"""
QRobust Attack Module
Input gradients, gradient-magnitude masks with their G_r/G curve, and the
masked fast-gradient-sign attack with ε̂ sweeps.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd

from qr_circuits import QnnModel, final_state, predict
from qr_datasets import Dataset, Sample
from qr_errors import AttackError, ValidationError
from qr_logging import get_logger
from qr_performance import PerformanceProfiler, performance_monitor
from qr_simulator import DensityMatrix1Q, infidelity, reduced_density
from qr_training import GradientOptions, input_loss_gradient
from qr_utils import SeedStreams

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary selection over input dimensions."""

    bits: np.ndarray
    fraction: float

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def dim(self) -> int:
        return self.bits.size

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    @classmethod
    def full(cls, dim: int) -> "Mask":
        return cls(np.ones(dim, dtype=bool), 1.0)

    @classmethod
    def from_indices(cls, dim: int, indices: Sequence[int]) -> "Mask":
        bits = np.zeros(dim, dtype=bool)
        bits[list(indices)] = True
        return cls(bits, bits.sum() / dim)

    def to_dict(self) -> Dict[str, Any]:
        return {"dim": self.dim, "indices": self.indices.tolist(), "fraction": self.fraction}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Mask":
        mask = cls.from_indices(int(data["dim"]), data["indices"])
        return cls(mask.bits, float(data.get("fraction", mask.fraction)))


@dataclass(frozen=True)
class GCurve:
    """Fraction of the total gradient l1 mass captured by the top-r inputs."""

    fractions: np.ndarray
    captured: np.ndarray
    order: np.ndarray
    mean_magnitude: np.ndarray

    def at(self, r: float) -> float:
        if r <= 0.0:
            return 0.0
        return float(self.captured[mask_size(r, self.order.size) - 1])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"r": self.fractions, "g_ratio": self.captured})


def mask_size(r: float, dim: int) -> int:
    """⌈r·dim⌉, at least one input."""
    return min(dim, max(1, int(math.ceil(r * dim - 1e-9))))


class Classifier(Protocol):
    """What the attack needs from a trained model."""

    feature_range: Tuple[float, float]

    def predict_proba(self, x: np.ndarray) -> float: ...

    def input_gradient(self, sample: Sample, indices: Optional[Sequence[int]] = None) -> np.ndarray: ...

    def output_state(self, x: np.ndarray) -> Optional[DensityMatrix1Q]: ...


class QnnClassifier:
    """Trained QNN behind the classifier interface."""

    def __init__(
        self,
        model: QnnModel,
        theta: Sequence[float],
        feature_range: Tuple[float, float],
        options: Optional[GradientOptions] = None,
        seed: int = 0,
    ):
        self.model = model
        self.theta = np.asarray(theta, dtype=np.float64)
        self.feature_range = tuple(feature_range)
        self.options = options or GradientOptions()
        self.streams = SeedStreams(seed)

    def predict_proba(self, x: np.ndarray) -> float:
        return predict(self.model, self.theta, x).p

    def input_gradient(self, sample: Sample, indices: Optional[Sequence[int]] = None) -> np.ndarray:
        rng = self.streams.generator("attack-oracle", sample.sample_id) if self.options.shots else None
        return input_loss_gradient(self.model, self.theta, sample, indices, self.options, rng)

    def output_state(self, x: np.ndarray) -> DensityMatrix1Q:
        return reduced_density(final_state(self.model, self.theta, x), self.model.output_qubit)


def input_gradient(
    model: QnnModel,
    theta: Sequence[float],
    sample: Sample,
    indices: Optional[Sequence[int]] = None,
    options: Optional[GradientOptions] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """∇ₓL by the parameter-shift rule; components outside ``indices`` are zero."""
    return input_loss_gradient(model, theta, sample, indices, options, rng)


def gradient_samples(classifier: Classifier, samples: Sequence[Sample], workers: int = 1) -> np.ndarray:
    """Stack of full input gradients, one row per sample."""
    with PerformanceProfiler(performance_monitor, "gradient_samples"):
        if workers > 1 and len(samples) > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                rows = list(executor.map(classifier.input_gradient, samples))
        else:
            rows = [classifier.input_gradient(s) for s in samples]
    return np.stack(rows)


def g_curve(gradients: np.ndarray) -> GCurve:
    """Sorted mean |∇ₓL| prefix sums normalised by the total l1 mass."""
    gradients = np.atleast_2d(np.asarray(gradients, dtype=np.float64))
    if gradients.shape[0] < 1:
        raise AttackError("at least one gradient sample is required")
    magnitude = np.abs(gradients).mean(axis=0)
    total = magnitude.sum()
    if not total > 0.0:
        raise AttackError(
            "all gradient samples are zero; the mask is undefined",
            context={"samples": gradients.shape[0], "dim": gradients.shape[1]},
        )
    order = np.argsort(-magnitude, kind="stable")
    captured = np.cumsum(magnitude[order]) / total
    captured[-1] = 1.0
    dim = magnitude.size
    return GCurve(
        fractions=np.arange(1, dim + 1) / dim,
        captured=captured,
        order=order,
        mean_magnitude=magnitude,
    )


def build_mask(gradients: np.ndarray, r: float) -> Tuple[Mask, GCurve]:
    """Top ⌈r·dim⌉ inputs by mean gradient magnitude, with the G_r/G curve."""
    if not 0.0 < r <= 1.0:
        raise ValidationError("mask fraction must lie in (0, 1]", field_name="r", field_value=r)
    curve = g_curve(gradients)
    dim = curve.order.size
    k = mask_size(r, dim)
    bits = np.zeros(dim, dtype=bool)
    bits[curve.order[:k]] = True
    mask = Mask(bits, r)
    logger.info(f"Mask keeps {k}/{dim} inputs (r={r:.3f}), G_r/G={curve.captured[k - 1]:.3f}")
    return mask, curve


def lcei_mask_default(num_qubits: int) -> Mask:
    """Central 40% of the qubits: Q7..Q14 for 20 qubits, five qubits for 12."""
    k = mask_size(0.4, num_qubits)
    start = num_qubits // 2 - (k - 1) // 2
    start = min(max(start, 0), num_qubits - k)
    mask = Mask.from_indices(num_qubits, range(start, start + k))
    return Mask(mask.bits, 0.4)


def mask_fgsm(sample: Sample, mask: Mask, epsilon: float, gradient: np.ndarray) -> Sample:
    """x' = x + ε·sign(∇ₓL)·m, with sign(0) = 0 and no clipping."""
    if epsilon < 0:
        raise ValidationError("epsilon must be non-negative", field_name="epsilon", field_value=epsilon)
    gradient = np.asarray(gradient, dtype=np.float64)
    if mask.dim != sample.features.size or gradient.size != sample.features.size:
        raise ValidationError(
            f"mask ({mask.dim}) and gradient ({gradient.size}) must match the input ({sample.features.size})",
            field_name="mask",
        )
    delta = epsilon * np.sign(gradient) * mask.bits
    return sample.with_features(sample.features + delta)


def correct_probability(p: float, label: int) -> float:
    return p if label == 1 else 1.0 - p


@dataclass
class AttackCurve:
    """Single-sample response to a Mask FGSM sweep."""

    sample_id: int
    label: int
    eps_hat: np.ndarray
    probabilities: np.ndarray
    correct: np.ndarray
    gradient: np.ndarray
    infidelities: Optional[np.ndarray] = None

    @property
    def clean_probability(self) -> float:
        return float(self.probabilities[0])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "sample_id": self.sample_id,
                "label": self.label,
                "eps_hat": self.eps_hat,
                "p_correct": self.probabilities,
                "correct": self.correct,
            }
        )
        if self.infidelities is not None:
            frame["infidelity"] = self.infidelities
        return frame


@dataclass
class SweepResult:
    curves: List[AttackCurve]
    eps_hat: np.ndarray
    mask: Mask
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def accuracy(self) -> np.ndarray:
        return np.mean([c.correct for c in self.curves], axis=0)

    def sample_frame(self) -> pd.DataFrame:
        return pd.concat([c.to_frame() for c in self.curves], ignore_index=True)

    def accuracy_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"eps_hat": self.eps_hat, "accuracy": self.accuracy})
        frame["mean_p_correct"] = np.mean([c.probabilities for c in self.curves], axis=0)
        if all(c.infidelities is not None for c in self.curves):
            frame["mean_infidelity"] = np.mean([c.infidelities for c in self.curves], axis=0)
        return frame


def _check_grid(eps_hat: Sequence[float]) -> np.ndarray:
    grid = np.asarray(eps_hat, dtype=np.float64)
    if grid.size == 0 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValidationError("ε̂ grid must start at 0 and increase strictly", field_name="eps_hat")
    return grid


def attack_sample(
    classifier: Classifier,
    sample: Sample,
    mask: Mask,
    eps_hat: Sequence[float],
    with_infidelity: bool = False,
    full_gradient: bool = False,
) -> AttackCurve:
    """
    Sweep ε̂ on one sample reusing a single clean-input gradient. Only the
    masked components are differentiated unless ``full_gradient`` is set.
    """
    grid = _check_grid(eps_hat)
    lo, hi = classifier.feature_range
    gradient = classifier.input_gradient(sample, None if full_gradient else mask.indices)
    clean_state = classifier.output_state(sample.features) if with_infidelity else None
    if with_infidelity and clean_state is None:
        raise AttackError("infidelity needs a classifier with a quantum output state")

    probabilities = np.empty(grid.size)
    infidelities = np.empty(grid.size) if with_infidelity else None
    for i, e in enumerate(grid):
        adversarial = mask_fgsm(sample, mask, e * (hi - lo), gradient)
        probabilities[i] = correct_probability(classifier.predict_proba(adversarial.features), sample.label)
        if with_infidelity:
            infidelities[i] = 0.0 if e == 0.0 else infidelity(clean_state, classifier.output_state(adversarial.features))
    return AttackCurve(
        sample_id=sample.sample_id,
        label=sample.label,
        eps_hat=grid,
        probabilities=probabilities,
        correct=probabilities > 0.5,
        gradient=gradient,
        infidelities=infidelities,
    )


def attack_sweep(
    classifier: Classifier,
    samples: Sequence[Sample],
    mask: Mask,
    eps_hat: Sequence[float],
    with_infidelity: bool = False,
    workers: int = 1,
    full_gradient: bool = False,
) -> SweepResult:
    """Per-sample attack curves and the aggregate accuracy curve."""
    grid = _check_grid(eps_hat)
    samples = list(samples)
    if not samples:
        raise AttackError("attack sweep needs at least one sample")

    def _one(sample: Sample) -> AttackCurve:
        return attack_sample(classifier, sample, mask, grid, with_infidelity, full_gradient)

    with PerformanceProfiler(performance_monitor, "attack_sweep"):
        if workers > 1 and len(samples) > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                curves = list(executor.map(_one, samples))
        else:
            curves = [_one(s) for s in samples]
    result = SweepResult(curves=curves, eps_hat=grid, mask=mask)
    accuracy = result.accuracy
    logger.info(
        f"Attack sweep over {len(curves)} samples: accuracy {accuracy[0]:.3f} at ε̂=0, "
        f"{accuracy[-1]:.3f} at ε̂={grid[-1]:.3f}"
    )
    return result


def generate_adversarial_set(
    classifier: Classifier,
    dataset: Dataset,
    mask: Mask,
    eps_hat: float = 0.1,
    per_class: int = 100,
) -> Dataset:
    """
    Mask-FGSM copies of the first ``per_class`` samples of each class at
    strength ``eps_hat``, keeping labels and sample ids.
    """
    lo, hi = dataset.feature_range
    chosen: List[Sample] = []
    for label in (0, 1):
        members = [s for s in dataset if s.label == label][:per_class]
        if len(members) < per_class:
            raise AttackError(
                f"class {label} has {len(members)} samples, {per_class} requested",
                context={"split": dataset.split},
            )
        chosen.extend(members)
    adversarial = [
        mask_fgsm(s, mask, eps_hat * (hi - lo), classifier.input_gradient(s, mask.indices)) for s in chosen
    ]
    return Dataset(
        samples=tuple(adversarial),
        split="adversarial",
        feature_range=dataset.feature_range,
        task=dataset.task,
        metadata={
            **dataset.metadata,
            "source_split": dataset.split,
            "eps_hat": eps_hat,
            "mask": mask.to_dict(),
            "class_counts": {0: per_class, 1: per_class},
        },
    )


def class_mean_gradients(gradients: np.ndarray, labels: Sequence[int], window: Optional[int] = None) -> Dict[int, np.ndarray]:
    """Per-class mean input gradient, reshaped to ``window``×``window`` when given."""
    gradients = np.asarray(gradients, dtype=np.float64)
    labels = np.asarray(labels)
    result = {}
    for label in (0, 1):
        rows = gradients[labels == label]
        if rows.size == 0:
            continue
        mean = rows.mean(axis=0)
        result[label] = mean.reshape(window, window) if window else mean
    return result
