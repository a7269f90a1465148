"""
QRobust Classical Baseline
Single-hidden-layer feedforward network (ReLU, sigmoid output) trained with
the shared Adam optimiser, plus the QNN-vs-FNN robustness comparison.
"""

import math
import time
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import special

from qr_datasets import Dataset, Sample
from qr_errors import RobustnessError, TrainingError, ValidationError
from qr_files import read_json, write_json
from qr_logging import get_logger, log_epoch
from qr_robustness import NoiseParams, SensitivityRecord, adv_robustness, noisy_adv_robustness
from qr_training import EpochRecord, TrainConfig, TrainHistory, adam_step
from qr_utils import SeedStreams

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class FnnModel:
    """d → h → 1 network; ``w1`` is (h, d)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def num_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + 1

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    @classmethod
    def unflatten(cls, params: np.ndarray, input_dim: int, hidden: int) -> "FnnModel":
        params = np.asarray(params, dtype=np.float64)
        expected = hidden * input_dim + 2 * hidden + 1
        if params.size != expected:
            raise ValidationError(f"expected {expected} parameters, got {params.size}", field_name="params")
        n1 = hidden * input_dim
        return cls(
            w1=params[:n1].reshape(hidden, input_dim),
            b1=params[n1 : n1 + hidden],
            w2=params[n1 + hidden : n1 + 2 * hidden],
            b2=float(params[-1]),
        )

    @classmethod
    def zeros(cls, input_dim: int, hidden: int = 5) -> "FnnModel":
        return cls(np.zeros((hidden, input_dim)), np.zeros(hidden), np.zeros(hidden), 0.0)

    @classmethod
    def initialize(cls, input_dim: int, hidden: int, rng: np.random.Generator) -> "FnnModel":
        """Uniform in ±1/√fan_in per layer."""
        s1 = 1.0 / math.sqrt(input_dim)
        s2 = 1.0 / math.sqrt(hidden)
        return cls(
            w1=rng.uniform(-s1, s1, (hidden, input_dim)),
            b1=rng.uniform(-s1, s1, hidden),
            w2=rng.uniform(-s2, s2, hidden),
            b2=float(rng.uniform(-s2, s2)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "fnn",
            "input_dim": self.input_dim,
            "hidden": self.hidden,
            "params": self.flatten().tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FnnModel":
        return cls.unflatten(np.asarray(data["params"]), int(data["input_dim"]), int(data["hidden"]))


def _check_input(model: FnnModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ValidationError(
            f"input has {x.shape[-1]} features, network expects {model.input_dim}", field_name="x"
        )
    return x


def _logits(model: FnnModel, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    z1 = x @ model.w1.T + model.b1
    return z1, np.maximum(z1, 0.0) @ model.w2 + model.b2


def sigmoid(z):
    return special.expit(z)


def fnn_forward(model: FnnModel, x: np.ndarray) -> float:
    """Label-1 probability for one input."""
    _, logit = _logits(model, _check_input(model, x))
    return float(sigmoid(logit))


def fnn_loss(model: FnnModel, x: np.ndarray, label: int) -> float:
    _, logit = _logits(model, _check_input(model, x))
    return float(np.logaddexp(0.0, -logit if label == 1 else logit))


def _backward(model: FnnModel, x: np.ndarray, labels: np.ndarray):
    """Per-batch mean loss, parameter gradient, per-sample input gradients and probabilities."""
    z1, logits = _logits(model, x)
    hidden = np.maximum(z1, 0.0)
    p = sigmoid(logits)
    losses = np.where(labels == 1, np.logaddexp(0.0, -logits), np.logaddexp(0.0, logits))
    d_logit = p - labels
    d_z1 = np.outer(d_logit, model.w2) * (z1 > 0.0)
    n = x.shape[0]
    grad = FnnModel(
        w1=d_z1.T @ x / n,
        b1=d_z1.mean(axis=0),
        w2=hidden.T @ d_logit / n,
        b2=float(d_logit.mean()),
    ).flatten()
    return float(losses.mean()), grad, d_z1 @ model.w1, p


def fnn_gradient(model: FnnModel, x: np.ndarray, labels: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Mean BCE loss and its gradient over the flattened parameters."""
    x = np.atleast_2d(_check_input(model, x))
    loss, grad, _, _ = _backward(model, x, np.asarray(labels, dtype=np.float64))
    return loss, grad


def fnn_input_gradient(model: FnnModel, sample: Sample) -> np.ndarray:
    """∂L/∂x for one sample by backpropagation."""
    x = np.atleast_2d(_check_input(model, sample.features))
    _, _, dx, _ = _backward(model, x, np.array([float(sample.label)]))
    return dx[0]


def fnn_evaluate(model: FnnModel, dataset: Dataset) -> Tuple[float, float]:
    x = _check_input(model, dataset.features_matrix())
    labels = dataset.labels().astype(np.float64)
    loss, _, _, p = _backward(model, x, labels)
    correct = np.where(labels == 1, p, 1.0 - p) > 0.5
    return loss, float(correct.mean())


def fnn_train(
    datasets: Tuple[Dataset, Dataset],
    config: TrainConfig,
    hidden: int = 5,
    adv_set: Optional[Dataset] = None,
) -> Tuple[FnnModel, TrainHistory]:
    """
    Mini-batch Adam training with the QNN batch protocol; ``adv_set`` mixes
    ⌊B·mix⌋ adversarial samples into every batch.
    """
    train_set, test_set = datasets
    if len(train_set) == 0 or len(test_set) == 0:
        raise TrainingError("training and test sets must be nonempty")
    streams = SeedStreams(config.seed)
    model = FnnModel.initialize(train_set.num_features, hidden, streams.generator("init"))
    params = model.flatten()
    adam = config.adam(params.size)
    history = TrainHistory()
    best_params, best_key = params.copy(), None

    x_train = train_set.features_matrix()
    y_train = train_set.labels().astype(np.float64)
    use_adv = adv_set is not None and len(adv_set) > 0
    adv_per_batch = int(math.floor(config.batch_size * config.adversarial_mix)) if use_adv else 0
    legit_per_batch = config.batch_size - adv_per_batch
    x_adv = adv_set.features_matrix() if use_adv else None
    y_adv = adv_set.labels().astype(np.float64) if use_adv else None
    n_batches = (
        math.ceil(len(train_set) / legit_per_batch) if legit_per_batch else math.ceil(len(adv_set) / adv_per_batch)
    )

    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = streams.generator("batch", epoch).permutation(len(train_set))
        adv_order = streams.generator("adversarial", epoch).permutation(len(adv_set)) if adv_per_batch else None
        losses, correct, seen = [], [], 0
        for step in range(n_batches):
            if adv_per_batch:
                idx = order[(step * legit_per_batch + np.arange(legit_per_batch)) % len(train_set)]
            else:
                idx = order[step * legit_per_batch : (step + 1) * legit_per_batch]
            xb, yb = x_train[idx], y_train[idx]
            if adv_per_batch:
                adv_idx = adv_order[(step * adv_per_batch + np.arange(adv_per_batch)) % len(adv_set)]
                xb = np.vstack([xb, x_adv[adv_idx]])
                yb = np.concatenate([yb, y_adv[adv_idx]])
            current = FnnModel.unflatten(params, model.input_dim, hidden)
            loss, grad, _, p = _backward(current, xb, yb)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingError("non-finite FNN loss", epoch=epoch, step=step)
            losses.append(loss * len(yb))
            seen += len(yb)
            correct.extend((np.where(yb == 1, p, 1.0 - p) > 0.5)[: len(idx)])
            params, adam = adam_step(adam, params, grad)

        current = FnnModel.unflatten(params, model.input_dim, hidden)
        test_loss, test_acc = fnn_evaluate(current, test_set)
        adv_acc = fnn_evaluate(current, adv_set)[1] if use_adv else None
        record = EpochRecord(
            epoch=epoch,
            loss=float(np.sum(losses) / seen),
            train_accuracy=float(np.mean(correct)) if correct else float("nan"),
            test_loss=test_loss,
            test_accuracy=test_acc,
            adversarial_accuracy=adv_acc,
            steps=n_batches,
            duration_s=time.perf_counter() - started,
        )
        history.records.append(record)
        key = (test_acc, -test_loss)
        if best_key is None or key > best_key:
            best_key, best_params = key, params.copy()
            history.best_epoch = epoch
        log_epoch(epoch, record.loss, record.train_accuracy, test_acc, adv_acc)

    return FnnModel.unflatten(best_params, model.input_dim, hidden), history


def save_fnn(path, model: FnnModel, history: Optional[TrainHistory] = None, metadata: Optional[Dict[str, Any]] = None):
    document = {"model": model.to_dict(), "history": history.to_dict() if history else None, "metadata": metadata or {}}
    return write_json(path, document)


def load_fnn(path) -> Tuple[FnnModel, Dict[str, Any]]:
    document = read_json(path)
    return FnnModel.from_dict(document["model"]), document.get("metadata", {})


class FnnClassifier:
    """Trained FNN behind the attack classifier interface."""

    def __init__(self, model: FnnModel, feature_range: Tuple[float, float] = (0.0, 1.0)):
        self.model = model
        self.feature_range = tuple(feature_range)

    def predict_proba(self, x: np.ndarray) -> float:
        return fnn_forward(self.model, x)

    def input_gradient(self, sample: Sample, indices: Optional[Sequence[int]] = None) -> np.ndarray:
        gradient = fnn_input_gradient(self.model, sample)
        if indices is None:
            return gradient
        kept = np.zeros_like(gradient)
        kept[list(indices)] = gradient[list(indices)]
        return kept

    def output_state(self, x: np.ndarray) -> None:
        return None


def _protocol(records: Sequence[SensitivityRecord]) -> Tuple[int, float]:
    eps = {round(r.eps_hat, 12) for r in records}
    if len(eps) != 1:
        raise RobustnessError("records mix several ε̂ values")
    return len(records), eps.pop()


def fnn_robustness_compare(
    qnn: Mapping[str, Sequence[SensitivityRecord]],
    fnn: Mapping[str, Sequence[SensitivityRecord]],
    noise: Optional[NoiseParams] = None,
) -> pd.DataFrame:
    """
    R̄_adv ratio QNN/FNN per training regime ("clean", "adversarial"), with
    the decoherence-scaled QNN score alongside when ``noise`` is given.
    """
    rows = []
    for regime in qnn:
        if regime not in fnn:
            continue
        q_protocol, f_protocol = _protocol(qnn[regime]), _protocol(fnn[regime])
        if q_protocol != f_protocol:
            raise RobustnessError(
                f"mismatched protocols for {regime}: QNN {q_protocol}, FNN {f_protocol} (samples, ε̂)"
            )
        q_ids = {r.sample_id for r in qnn[regime]}
        f_ids = {r.sample_id for r in fnn[regime]}
        if q_ids != f_ids:
            raise RobustnessError(
                f"QNN and FNN {regime} records cover different samples",
                context={"qnn_only": sorted(q_ids - f_ids)[:10], "fnn_only": sorted(f_ids - q_ids)[:10]},
            )
        q_score = adv_robustness([r.sensitivity for r in qnn[regime]]).mean
        f_score = adv_robustness([r.sensitivity for r in fnn[regime]]).mean
        row = {
            "regime": regime,
            "samples": q_protocol[0],
            "eps_hat": q_protocol[1],
            "qnn_r_adv": q_score,
            "fnn_r_adv": f_score,
            "ratio": q_score / f_score,
        }
        if noise is not None:
            noisy = noisy_adv_robustness([r.sensitivity for r in qnn[regime]], noise).mean
            row.update({"qnn_noisy_r_adv": noisy, "noisy_ratio": noisy / f_score})
        rows.append(row)
    if not rows:
        raise RobustnessError("no training regime is present in both reports")
    return pd.DataFrame(rows)
