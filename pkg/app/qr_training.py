"""
QRobust Training Module
Parameter-shift gradients, the Adam optimiser, and clean / adversarial
mini-batch training of QNN classifiers with checkpointing.
"""

import math
import time
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from qr_circuits import (
    QnnModel,
    cross_entropy,
    cross_entropy_derivative,
    initial_parameters,
    predict,
)
from qr_datasets import Dataset, Sample
from qr_errors import TrainingError, ValidationError
from qr_files import read_json, write_json
from qr_logging import get_logger, log_epoch
from qr_performance import performance_monitor
from qr_simulator import StateVector, apply_gate, apply_gates, expectation_z, sample_counts
from qr_utils import SeedStreams

logger = get_logger(__name__)

SHIFT = math.pi / 2.0


@dataclass(frozen=True)
class GradientOptions:
    """Evaluation settings for parameter-shift derivatives."""

    shots: Optional[int] = None
    cache_limit_mb: int = 512
    workers: int = 1


def _measure_z(state: StateVector, qubit: int, shots: Optional[int], rng: Optional[np.random.Generator]) -> float:
    if shots is None:
        return expectation_z(state, qubit)
    counts = sample_counts(state, qubit, shots, rng)
    return (counts[0] - counts[1]) / shots


def parameter_shift_derivatives(
    model: QnnModel,
    theta: Sequence[float],
    x: Sequence[float],
    slot_ids: Sequence[int],
    options: Optional[GradientOptions] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, np.ndarray]:
    """
    ⟨σz⟩ of the output qubit and d⟨σz⟩/d(angle) for each requested slot via
    the ±π/2 shift rule.

    States before the shifted gates are checkpointed within
    ``options.cache_limit_mb``; derivatives for gates without a checkpoint
    replay from the nearest earlier one.
    """
    options = options or GradientOptions()
    if options.shots is not None and rng is None:
        raise ValidationError("finite-shot gradients need a seeded generator", field_name="rng")

    circuit = model.circuit
    gates = circuit.bind(theta, x)
    locations = circuit.slot_locations()
    n = model.num_qubits
    out = model.output_qubit

    targets: Dict[int, List[Tuple[int, int]]] = {}
    for idx, slot_id in enumerate(slot_ids):
        k, pos = locations[slot_id]
        targets.setdefault(k, []).append((idx, pos))
    needed = sorted(targets)

    state_bytes = 16 << n
    budget = (options.cache_limit_mb << 20) // state_bytes
    if needed and budget > 0:
        stride = max(1, math.ceil(len(needed) / budget))
        checkpoints = needed[::stride]
    else:
        checkpoints = []
    checkpoint_set = set(checkpoints)

    cache: Dict[int, StateVector] = {}
    state = StateVector.zero(n)
    for k, gate in enumerate(gates):
        if k in checkpoint_set:
            cache[k] = state.copy()
        apply_gate(state, gate, inplace=True)
    z = _measure_z(state, out, options.shots, rng)

    derivatives = np.zeros(len(slot_ids))
    for k in needed:
        i = bisect_right(checkpoints, k) - 1
        if i >= 0:
            start = checkpoints[i]
            prefix = cache[start].copy()
        else:
            start = 0
            prefix = StateVector.zero(n)
        apply_gates(prefix, gates[start:k], inplace=True)
        for idx, pos in targets[k]:
            values = []
            for sign in (1.0, -1.0):
                shifted = prefix.copy()
                apply_gate(shifted, gates[k].shifted(pos, sign * SHIFT), inplace=True)
                apply_gates(shifted, gates[k + 1 :], inplace=True)
                values.append(_measure_z(shifted, out, options.shots, rng))
            derivatives[idx] = 0.5 * (values[0] - values[1])

    performance_monitor.increment_counter("circuit_evaluations", 1 + 2 * len(slot_ids))
    return z, derivatives


@dataclass(frozen=True)
class SampleGradient:
    """Loss, label-1 probability and a loss gradient for one sample."""

    sample_id: int
    loss: float
    p: float
    correct: bool
    gradient: np.ndarray


def _loss_gradient(
    model: QnnModel,
    theta: Sequence[float],
    sample: Sample,
    slot_ids: Sequence[int],
    options: Optional[GradientOptions],
    rng: Optional[np.random.Generator],
) -> SampleGradient:
    z, dz = parameter_shift_derivatives(model, theta, sample.features, slot_ids, options, rng)
    p = min(max(0.5 * (z + 1.0), 0.0), 1.0)
    dl_dp = cross_entropy_derivative(p, sample.label)
    correct_p = p if sample.label == 1 else 1.0 - p
    return SampleGradient(
        sample_id=sample.sample_id,
        loss=cross_entropy(p, sample.label),
        p=p,
        correct=correct_p > 0.5,
        gradient=dl_dp * 0.5 * dz,
    )


def loss_and_gradient(
    model: QnnModel,
    theta: Sequence[float],
    sample: Sample,
    options: Optional[GradientOptions] = None,
    rng: Optional[np.random.Generator] = None,
) -> SampleGradient:
    """Cross-entropy loss and ∂L/∂θ for every trainable index."""
    return _loss_gradient(model, theta, sample, model.circuit.trainable_slots(), options, rng)


def psr_gradient(
    model: QnnModel,
    theta: Sequence[float],
    sample: Sample,
    options: Optional[GradientOptions] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """∂L/∂θ by the parameter-shift rule (2P shifted circuit evaluations)."""
    return loss_and_gradient(model, theta, sample, options, rng).gradient


def input_loss_gradient(
    model: QnnModel,
    theta: Sequence[float],
    sample: Sample,
    indices: Optional[Sequence[int]] = None,
    options: Optional[GradientOptions] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    ∂L/∂x by the parameter-shift rule on the slots carrying each feature.
    Components outside ``indices`` are left at zero and cost no evaluations.
    """
    data_slots = model.circuit.data_slots()
    if indices is None:
        indices = range(model.num_features)
    indices = [int(j) for j in indices]
    result = _loss_gradient(model, theta, sample, [data_slots[j] for j in indices], options, rng)
    gradient = np.zeros(model.num_features)
    gradient[indices] = result.gradient
    return gradient


def loss_at(model: QnnModel, theta: Sequence[float], features: Sequence[float], label: int) -> float:
    return cross_entropy(predict(model, theta, features).p, label)


@dataclass(frozen=True)
class RegularizerTerms:
    """First-order expansion of the adversarial loss around a clean input."""

    clean_loss: float
    perturbed_loss: float
    first_order: float

    @property
    def residual(self) -> float:
        return self.perturbed_loss - self.clean_loss - self.first_order


def regularizer_terms(model: QnnModel, theta: Sequence[float], sample: Sample, delta: Sequence[float]) -> RegularizerTerms:
    """L(x), L(x+δ) and δ·∇ₓL; the residual is the second-order remainder."""
    delta = np.asarray(delta, dtype=np.float64)
    gradient = input_loss_gradient(model, theta, sample)
    return RegularizerTerms(
        clean_loss=loss_at(model, theta, sample.features, sample.label),
        perturbed_loss=loss_at(model, theta, sample.features + delta, sample.label),
        first_order=float(delta @ gradient),
    )


@dataclass
class AdamState:
    """Adam moments and hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    learning_rate: float = 0.1
    eps: float = 1e-8

    @classmethod
    def zeros(cls, num_params: int, **hyper) -> "AdamState":
        return cls(m=np.zeros(num_params), v=np.zeros(num_params), **hyper)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "m": self.m.tolist(),
            "v": self.v.tolist(),
            "t": self.t,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "learning_rate": self.learning_rate,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AdamState":
        return cls(
            m=np.asarray(data["m"], dtype=np.float64),
            v=np.asarray(data["v"], dtype=np.float64),
            t=int(data["t"]),
            beta1=float(data["beta1"]),
            beta2=float(data["beta2"]),
            learning_rate=float(data["learning_rate"]),
            eps=float(data["eps"]),
        )


def adam_step(state: AdamState, theta: np.ndarray, grad: np.ndarray) -> Tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new (θ, state) without mutating inputs."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if theta.shape != state.m.shape or grad.shape != state.m.shape:
        raise ValidationError(
            f"Adam dimension mismatch: θ {theta.shape}, g {grad.shape}, state {state.m.shape}",
            field_name="grad",
        )
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_theta = theta - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(
        m=m,
        v=v,
        t=t,
        beta1=state.beta1,
        beta2=state.beta2,
        learning_rate=state.learning_rate,
        eps=state.eps,
    )
    return new_theta, new_state


@dataclass
class TrainConfig:
    """Optimisation schedule for one training run."""

    batch_size: int = 100
    epochs: int = 20
    learning_rate: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    adversarial_mix: float = 0.5
    init_scale: float = math.pi
    workers: int = 1
    cache_limit_mb: int = 512
    gradient_shots: Optional[int] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1", field_name="batch_size", field_value=self.batch_size)
        if not 0.0 <= self.adversarial_mix <= 1.0:
            raise ValidationError(
                "adversarial_mix must lie in [0, 1]", field_name="adversarial_mix", field_value=self.adversarial_mix
            )

    @classmethod
    def from_run_config(cls, run) -> "TrainConfig":
        t = run.training
        return cls(
            batch_size=t.batch_size,
            epochs=t.epochs,
            learning_rate=t.learning_rate,
            beta1=t.beta1,
            beta2=t.beta2,
            eps=t.eps,
            seed=run.seed,
            adversarial_mix=t.adversarial_mix,
            init_scale=t.init_scale,
            workers=run.system.workers,
            cache_limit_mb=run.system.prefix_cache_mb,
            gradient_shots=t.gradient_shots,
        )

    def gradient_options(self) -> GradientOptions:
        return GradientOptions(shots=self.gradient_shots, cache_limit_mb=self.cache_limit_mb, workers=self.workers)

    def adam(self, num_params: int) -> AdamState:
        return AdamState.zeros(
            num_params, beta1=self.beta1, beta2=self.beta2, learning_rate=self.learning_rate, eps=self.eps
        )


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    test_loss: float
    test_accuracy: float
    adversarial_accuracy: Optional[float] = None
    steps: int = 0
    duration_s: float = 0.0


@dataclass
class TrainHistory:
    """Per-epoch training record; ``best_epoch`` marks the checkpointed θ*."""

    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def losses(self) -> List[float]:
        return [r.loss for r in self.records]

    @property
    def train_accuracy(self) -> List[float]:
        return [r.train_accuracy for r in self.records]

    @property
    def test_accuracy(self) -> List[float]:
        return [r.test_accuracy for r in self.records]

    @property
    def adversarial_accuracy(self) -> List[Optional[float]]:
        return [r.adversarial_accuracy for r in self.records]

    def best(self) -> Optional[EpochRecord]:
        for r in self.records:
            if r.epoch == self.best_epoch:
                return r
        return None

    def to_frame(self) -> pd.DataFrame:
        columns = [f.name for f in EpochRecord.__dataclass_fields__.values()]
        frame = pd.DataFrame([asdict(r) for r in self.records], columns=columns)
        frame["best"] = frame["epoch"] == self.best_epoch
        return frame

    def to_dict(self) -> Dict[str, Any]:
        return {"records": [asdict(r) for r in self.records], "best_epoch": self.best_epoch}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainHistory":
        return cls(
            records=[EpochRecord(**r) for r in data.get("records", [])],
            best_epoch=data.get("best_epoch"),
        )


@dataclass
class TrainingCheckpoint:
    """Everything needed to resume: current and best θ, optimiser state, history."""

    model: QnnModel
    theta: np.ndarray
    best_theta: np.ndarray
    adam: AdamState
    history: TrainHistory
    next_epoch: int
    config: Dict[str, Any] = field(default_factory=dict)
    mode: str = "clean"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "qnn-checkpoint",
            "mode": self.mode,
            "model": self.model.to_dict(),
            "theta": self.theta.tolist(),
            "best_theta": self.best_theta.tolist(),
            "adam": self.adam.to_dict(),
            "history": self.history.to_dict(),
            "next_epoch": self.next_epoch,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainingCheckpoint":
        if data.get("kind") != "qnn-checkpoint":
            raise TrainingError("document is not a QNN training checkpoint")
        return cls(
            model=QnnModel.from_dict(data["model"]),
            theta=np.asarray(data["theta"], dtype=np.float64),
            best_theta=np.asarray(data["best_theta"], dtype=np.float64),
            adam=AdamState.from_dict(data["adam"]),
            history=TrainHistory.from_dict(data["history"]),
            next_epoch=int(data["next_epoch"]),
            config=data.get("config", {}),
            mode=data.get("mode", "clean"),
        )


def save_checkpoint(path: Union[str, Path], checkpoint: TrainingCheckpoint) -> Path:
    return write_json(path, checkpoint.to_dict())


def load_checkpoint(path: Union[str, Path]) -> TrainingCheckpoint:
    return TrainingCheckpoint.from_dict(read_json(path))


def _map(func: Callable, items: Sequence, workers: int) -> List:
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))


def evaluate(model: QnnModel, theta: Sequence[float], dataset: Dataset, workers: int = 1) -> Tuple[float, float]:
    """Mean cross-entropy and accuracy over a dataset (exact mode)."""
    if len(dataset) == 0:
        raise ValidationError("cannot evaluate on an empty dataset", field_name="dataset")
    predictions = _map(lambda s: predict(model, theta, s.features), list(dataset), workers)
    losses = [cross_entropy(pr.p, s.label) for pr, s in zip(predictions, dataset)]
    correct = [pr.is_correct(s.label) for pr, s in zip(predictions, dataset)]
    return float(np.mean(losses)), float(np.mean(correct))


def _batches(
    num_legit: int, num_adv: int, legit_per_batch: int, adv_per_batch: int
) -> int:
    if legit_per_batch > 0:
        return math.ceil(num_legit / legit_per_batch)
    return math.ceil(num_adv / adv_per_batch)


def _train(
    model: QnnModel,
    datasets: Tuple[Dataset, Dataset],
    adv_set: Optional[Dataset],
    config: TrainConfig,
    init_theta: Optional[np.ndarray],
    resume: Optional[TrainingCheckpoint],
    on_epoch: Optional[Callable[[TrainingCheckpoint], None]],
    mode: str,
) -> Tuple[np.ndarray, TrainHistory]:
    train_set, test_set = datasets
    if len(train_set) == 0 or len(test_set) == 0:
        raise TrainingError("training and test sets must be nonempty")

    streams = SeedStreams(config.seed)
    options = config.gradient_options()
    trainable = model.circuit.trainable_slots()

    if resume is not None:
        theta = resume.theta.copy()
        best_theta = resume.best_theta.copy()
        adam = resume.adam
        history = resume.history
        start_epoch = resume.next_epoch
    else:
        if init_theta is not None:
            theta = np.asarray(init_theta, dtype=np.float64).copy()
        else:
            theta = initial_parameters(model, streams.generator("init"), config.init_scale)
        best_theta = theta.copy()
        adam = config.adam(model.num_params)
        history = TrainHistory()
        start_epoch = 0

    best = history.best()
    best_key = (best.test_accuracy, -best.test_loss) if best else None

    use_adv = adv_set is not None and len(adv_set) > 0
    adv_per_batch = int(math.floor(config.batch_size * config.adversarial_mix)) if use_adv else 0
    legit_per_batch = config.batch_size - adv_per_batch
    n_batches = _batches(len(train_set), len(adv_set) if use_adv else 0, legit_per_batch, adv_per_batch)
    train_samples = list(train_set)
    adv_samples = list(adv_set) if use_adv else []

    for epoch in range(start_epoch, config.epochs):
        started = time.perf_counter()
        order = streams.generator("batch", epoch).permutation(len(train_samples))
        adv_order = (
            streams.generator("adversarial", epoch).permutation(len(adv_samples)) if adv_per_batch else None
        )
        epoch_losses: List[float] = []
        legit_correct: List[bool] = []

        for step in range(n_batches):
            if adv_per_batch:
                # mixed batches stay full; the last one wraps to the start of the permutation
                legit = [
                    train_samples[order[(step * legit_per_batch + i) % len(train_samples)]]
                    for i in range(legit_per_batch)
                ]
            else:
                legit = [train_samples[i] for i in order[step * legit_per_batch : (step + 1) * legit_per_batch]]
            adv = [
                adv_samples[adv_order[(step * adv_per_batch + i) % len(adv_samples)]]
                for i in range(adv_per_batch)
            ]
            batch = legit + adv

            def _one(sample: Sample, _epoch=epoch, _step=step) -> SampleGradient:
                rng = (
                    streams.generator("shots", _epoch, _step, sample.sample_id)
                    if options.shots is not None
                    else None
                )
                return _loss_gradient(model, theta, sample, trainable, options, rng)

            results = _map(_one, batch, options.workers)
            grad = np.zeros(model.num_params)
            for r in results:
                grad += r.gradient
            grad /= len(results)

            batch_losses = [r.loss for r in results]
            if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(batch_losses))):
                raise TrainingError(
                    "non-finite loss or gradient",
                    epoch=epoch,
                    step=step,
                    context={
                        "theta_norm": float(np.linalg.norm(theta)),
                        "batch_ids": [s.sample_id for s in batch],
                    },
                )
            epoch_losses.extend(batch_losses)
            legit_correct.extend(r.correct for r in results[: len(legit)])
            theta, adam = adam_step(adam, theta, grad)

        test_loss, test_acc = evaluate(model, theta, test_set, options.workers)
        adv_acc = evaluate(model, theta, adv_set, options.workers)[1] if use_adv else None
        record = EpochRecord(
            epoch=epoch,
            loss=float(np.mean(epoch_losses)),
            train_accuracy=float(np.mean(legit_correct)) if legit_correct else float("nan"),
            test_loss=test_loss,
            test_accuracy=test_acc,
            adversarial_accuracy=adv_acc,
            steps=n_batches,
            duration_s=time.perf_counter() - started,
        )
        history.records.append(record)

        key = (test_acc, -test_loss)
        if best_key is None or key > best_key:
            best_key = key
            best_theta = theta.copy()
            history.best_epoch = epoch

        log_epoch(epoch, record.loss, record.train_accuracy, test_acc, adv_acc)
        if on_epoch is not None:
            on_epoch(
                TrainingCheckpoint(
                    model=model,
                    theta=theta.copy(),
                    best_theta=best_theta.copy(),
                    adam=adam,
                    history=history,
                    next_epoch=epoch + 1,
                    config=asdict(config),
                    mode=mode,
                )
            )

    return best_theta, history


def train_clean(
    model: QnnModel,
    datasets: Tuple[Dataset, Dataset],
    config: TrainConfig,
    init_theta: Optional[np.ndarray] = None,
    resume: Optional[TrainingCheckpoint] = None,
    on_epoch: Optional[Callable[[TrainingCheckpoint], None]] = None,
) -> Tuple[np.ndarray, TrainHistory]:
    """
    Mini-batch Adam on the empirical cross-entropy risk.

    Batches are drawn without replacement within an epoch; the returned θ*
    is the epoch with the best test accuracy (ties: lower test loss).
    """
    return _train(model, datasets, None, config, init_theta, resume, on_epoch, "clean")


def train_adversarial(
    model: QnnModel,
    datasets: Tuple[Dataset, Dataset],
    adv_set: Dataset,
    config: TrainConfig,
    init_theta: Optional[np.ndarray] = None,
    resume: Optional[TrainingCheckpoint] = None,
    on_epoch: Optional[Callable[[TrainingCheckpoint], None]] = None,
) -> Tuple[np.ndarray, TrainHistory]:
    """
    Training on mixed batches: ⌊B·mix⌋ adversarial samples (cycled from
    ``adv_set``) and the rest legitimate samples. mix = 0 is clean training.
    """
    if adv_set is None or len(adv_set) == 0:
        raise TrainingError("adversarial training needs a nonempty adversarial set")
    return _train(model, datasets, adv_set, config, init_theta, resume, on_epoch, "adversarial")
