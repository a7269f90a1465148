"""
QRobust Circuits Module
Builds the two QNN classifiers (interleaved image encoding and cluster-state
excitation) as slot-bound circuits, evaluates predictions and the
cross-entropy loss, and serialises model architectures.
"""

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from qr_errors import CircuitError, ValidationError
from qr_files import read_json, write_json
from qr_logging import get_logger
from qr_simulator import (
    Gate,
    GateKind,
    StateVector,
    apply_gates,
    expectation_z,
    sample_counts,
)

logger = get_logger(__name__)

PROB_CLAMP = 1e-12
MODEL_FORMAT = "qrobust-model"
MODEL_FORMAT_VERSION = 1

_HALF_PI = math.pi / 2.0
_HADAMARD_ANGLES = (_HALF_PI, _HALF_PI, _HALF_PI)


class SlotRole(Enum):
    TRAINABLE = "trainable"  # angle = θ_i
    ENCODED = "encoded"  # angle = θ_i + x_j
    DATA = "data"  # angle = x_j
    FIXED = "fixed"  # angle = constant


class Task(Enum):
    EMNIST = "emnist"
    LCEI = "lcei"


@dataclass(frozen=True)
class ParameterBinding:
    """How one gate angle is produced from (θ, x)."""

    slot_id: int
    role: SlotRole
    trainable_index: Optional[int] = None
    data_index: Optional[int] = None
    value: float = 0.0

    def angle(self, theta: np.ndarray, x: np.ndarray) -> float:
        if self.role is SlotRole.TRAINABLE:
            return float(theta[self.trainable_index])
        if self.role is SlotRole.ENCODED:
            return float(theta[self.trainable_index] + x[self.data_index])
        if self.role is SlotRole.DATA:
            return float(x[self.data_index])
        return self.value

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slot_id": self.slot_id,
            "role": self.role.value,
            "trainable_index": self.trainable_index,
            "data_index": self.data_index,
            "value": self.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ParameterBinding":
        return cls(
            slot_id=int(data["slot_id"]),
            role=SlotRole(data["role"]),
            trainable_index=data.get("trainable_index"),
            data_index=data.get("data_index"),
            value=float(data.get("value", 0.0)),
        )


@dataclass(frozen=True)
class Instruction:
    """A gate template: its angles come from the bindings in ``slots``."""

    kind: GateKind
    qubits: Tuple[int, ...]
    slots: Tuple[ParameterBinding, ...] = ()

    def gate(self, theta: np.ndarray, x: np.ndarray) -> Gate:
        angles = tuple(slot.angle(theta, x) for slot in self.slots)
        return Gate(self.kind, self.qubits, angles)


@dataclass(frozen=True)
class Circuit:
    """Ordered gate program over ``num_qubits`` with explicit parameter bindings."""

    num_qubits: int
    instructions: Tuple[Instruction, ...]
    num_params: int
    num_features: int

    def __post_init__(self):
        self._check_bindings()

    def _check_bindings(self) -> None:
        trainable: Dict[int, int] = {}
        data: Dict[int, int] = {}
        slot_ids = set()
        for instr in self.instructions:
            for q in instr.qubits:
                if not 0 <= q < self.num_qubits:
                    raise CircuitError(f"qubit {q} outside the {self.num_qubits}-qubit register")
            for slot in instr.slots:
                if slot.slot_id in slot_ids:
                    raise CircuitError("duplicate slot id", slot_id=slot.slot_id)
                slot_ids.add(slot.slot_id)
                if slot.role in (SlotRole.TRAINABLE, SlotRole.ENCODED):
                    if slot.trainable_index is None:
                        raise CircuitError("trainable slot without index", slot_id=slot.slot_id)
                    trainable[slot.trainable_index] = trainable.get(slot.trainable_index, 0) + 1
                if slot.role in (SlotRole.ENCODED, SlotRole.DATA):
                    if slot.data_index is None:
                        raise CircuitError("data slot without index", slot_id=slot.slot_id)
                    data[slot.data_index] = data.get(slot.data_index, 0) + 1

        if sorted(trainable) != list(range(self.num_params)) or any(c != 1 for c in trainable.values()):
            raise CircuitError(
                "every trainable index 0..P-1 must be bound exactly once",
                context={"num_params": self.num_params, "bound": len(trainable)},
            )
        if sorted(data) != list(range(self.num_features)) or any(c != 1 for c in data.values()):
            raise CircuitError(
                "every data index 0..d-1 must be bound exactly once",
                context={"num_features": self.num_features, "bound": len(data)},
            )

    def check_inputs(self, theta: np.ndarray, x: np.ndarray) -> None:
        if theta.shape != (self.num_params,):
            raise ValidationError(
                f"expected {self.num_params} parameters, got shape {theta.shape}",
                field_name="theta",
            )
        if x.shape != (self.num_features,):
            raise ValidationError(
                f"expected {self.num_features} features, got shape {x.shape}",
                field_name="x",
            )

    def bind(self, theta: Sequence[float], x: Sequence[float]) -> List[Gate]:
        theta = np.asarray(theta, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        self.check_inputs(theta, x)
        return [instr.gate(theta, x) for instr in self.instructions]

    def slot_locations(self) -> Dict[int, Tuple[int, int]]:
        """slot_id -> (instruction index, angle position)."""
        locations = {}
        for k, instr in enumerate(self.instructions):
            for pos, slot in enumerate(instr.slots):
                locations[slot.slot_id] = (k, pos)
        return locations

    def slots(self) -> List[ParameterBinding]:
        return [slot for instr in self.instructions for slot in instr.slots]

    def trainable_slots(self) -> List[int]:
        """Slot id for each trainable index, ordered by index."""
        by_index = {
            s.trainable_index: s.slot_id
            for s in self.slots()
            if s.role in (SlotRole.TRAINABLE, SlotRole.ENCODED)
        }
        return [by_index[i] for i in range(self.num_params)]

    def data_slots(self) -> List[int]:
        """Slot id for each data index, ordered by index."""
        by_index = {
            s.data_index: s.slot_id for s in self.slots() if s.role in (SlotRole.ENCODED, SlotRole.DATA)
        }
        return [by_index[j] for j in range(self.num_features)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "num_qubits": self.num_qubits,
            "num_params": self.num_params,
            "num_features": self.num_features,
            "instructions": [
                {
                    "kind": instr.kind.value,
                    "qubits": list(instr.qubits),
                    "slots": [s.to_dict() for s in instr.slots],
                }
                for instr in self.instructions
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Circuit":
        instructions = tuple(
            Instruction(
                kind=GateKind(item["kind"]),
                qubits=tuple(int(q) for q in item["qubits"]),
                slots=tuple(ParameterBinding.from_dict(s) for s in item["slots"]),
            )
            for item in data["instructions"]
        )
        return cls(
            num_qubits=int(data["num_qubits"]),
            instructions=instructions,
            num_params=int(data["num_params"]),
            num_features=int(data["num_features"]),
        )


@dataclass(frozen=True)
class QnnModel:
    """A bound classifier circuit plus the metadata needed to rebuild it."""

    circuit: Circuit
    num_qubits: int
    num_params: int
    num_features: int
    output_qubit: int
    task: Task
    block_sizes: Tuple[int, ...] = ()
    prep_length: int = 0

    @property
    def encoded_count(self) -> int:
        return sum(1 for s in self.circuit.slots() if s.role is SlotRole.ENCODED)

    @property
    def data_only_count(self) -> int:
        return sum(1 for s in self.circuit.slots() if s.role is SlotRole.DATA)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "task": self.task.value,
            "num_qubits": self.num_qubits,
            "num_params": self.num_params,
            "num_features": self.num_features,
            "output_qubit": self.output_qubit,
            "block_sizes": list(self.block_sizes),
            "prep_length": self.prep_length,
            "circuit": self.circuit.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "QnnModel":
        if data.get("format") != MODEL_FORMAT:
            raise CircuitError(f"not a {MODEL_FORMAT} document")
        if int(data.get("version", 0)) > MODEL_FORMAT_VERSION:
            raise CircuitError(f"unsupported model format version {data.get('version')}")
        circuit = Circuit.from_dict(data["circuit"])
        return cls(
            circuit=circuit,
            num_qubits=int(data["num_qubits"]),
            num_params=int(data["num_params"]),
            num_features=int(data["num_features"]),
            output_qubit=int(data["output_qubit"]),
            task=Task(data["task"]),
            block_sizes=tuple(int(b) for b in data.get("block_sizes", [])),
            prep_length=int(data.get("prep_length", 0)),
        )


@dataclass(frozen=True)
class Prediction:
    """p is the probability of label 1; label 1 is the ⟨σz⟩ = +1 outcome."""

    p: float
    label_hat: int

    @classmethod
    def from_probability(cls, p: float) -> "Prediction":
        return cls(p=float(p), label_hat=int(p > 0.5))

    def correct_probability(self, label: int) -> float:
        return self.p if label == 1 else 1.0 - self.p

    def is_correct(self, label: int) -> bool:
        # p = 0.5 is never correct
        return self.correct_probability(label) > 0.5


def block_span(num_qubits: int, block_size: int) -> range:
    """Qubits covered by a block, centred on the output qubit ⌊n/2⌋."""
    start = num_qubits // 2 - block_size // 2
    start = min(max(start, 0), num_qubits - block_size)
    return range(start, start + block_size)


def brickwork_pairs(span: range) -> List[Tuple[int, int]]:
    """Nearest-neighbour CZ pairs: (first, second), (third, fourth), … then the offset layer."""
    qubits = list(span)
    first = [(qubits[i], qubits[i + 1]) for i in range(0, len(qubits) - 1, 2)]
    second = [(qubits[i], qubits[i + 1]) for i in range(1, len(qubits) - 1, 2)]
    return first + second


class _SlotAllocator:
    def __init__(self):
        self.next_slot = 0
        self.next_trainable = 0

    def slot_id(self) -> int:
        sid = self.next_slot
        self.next_slot += 1
        return sid

    def trainable(self, data_index: Optional[int] = None) -> ParameterBinding:
        index = self.next_trainable
        self.next_trainable += 1
        role = SlotRole.ENCODED if data_index is not None else SlotRole.TRAINABLE
        return ParameterBinding(self.slot_id(), role, trainable_index=index, data_index=data_index)

    def data(self, data_index: int) -> ParameterBinding:
        return ParameterBinding(self.slot_id(), SlotRole.DATA, data_index=data_index)

    def fixed(self, value: float) -> ParameterBinding:
        return ParameterBinding(self.slot_id(), SlotRole.FIXED, value=float(value))


def _validate_blocks(num_qubits: int, block_sizes: Sequence[int]) -> None:
    if num_qubits < 1:
        raise CircuitError("register needs at least one qubit")
    if any(b < 1 or b > num_qubits for b in block_sizes):
        raise CircuitError(f"block sizes must lie in [1, {num_qubits}]", context={"blocks": list(block_sizes)})
    if any(a < b for a, b in zip(block_sizes, block_sizes[1:])):
        raise CircuitError("block sizes must be nonincreasing", context={"blocks": list(block_sizes)})


def _variational_stage(
    alloc: _SlotAllocator, num_qubits: int, block_sizes: Sequence[int], num_encoded: int
) -> List[Instruction]:
    """SU2 layer + brickwork CZ per block, then the trailing Rx on the output qubit."""
    instructions: List[Instruction] = []
    encoded = 0
    for size in block_sizes:
        span = block_span(num_qubits, size)
        for q in span:
            slots = []
            # execution order inside Rz(φ)Rx(θ)Rz(λ) is λ, θ, φ
            for _ in range(3):
                if encoded < num_encoded:
                    slots.append(alloc.trainable(data_index=encoded))
                    encoded += 1
                else:
                    slots.append(alloc.trainable())
            lam, theta, phi = slots
            instructions.append(Instruction(GateKind.SU2, (q,), (theta, phi, lam)))
        for a, b in brickwork_pairs(span):
            instructions.append(Instruction(GateKind.CZ, (a, b)))
    instructions.append(Instruction(GateKind.RX, (num_qubits // 2,), (alloc.trainable(),)))
    return instructions


def build_emnist_model(num_qubits: int, block_sizes: Sequence[int], num_features: int) -> QnnModel:
    """
    Interleaved-encoding classifier: the first ``num_features`` SU2 angles in
    execution order carry θ_i + x_j, the rest are trainable only, and a
    trainable Rx on the output qubit precedes measurement.
    """
    block_sizes = tuple(int(b) for b in block_sizes)
    _validate_blocks(num_qubits, block_sizes)
    capacity = 3 * sum(block_sizes)
    if num_features < 0 or num_features > capacity:
        raise CircuitError(
            f"{num_features} features need more than the {capacity} SU2 angle slots available",
            context={"blocks": list(block_sizes)},
        )
    alloc = _SlotAllocator()
    instructions = _variational_stage(alloc, num_qubits, block_sizes, num_features)
    circuit = Circuit(num_qubits, tuple(instructions), alloc.next_trainable, num_features)
    model = QnnModel(
        circuit=circuit,
        num_qubits=num_qubits,
        num_params=alloc.next_trainable,
        num_features=num_features,
        output_qubit=num_qubits // 2,
        task=Task.EMNIST,
        block_sizes=block_sizes,
    )
    logger.debug(
        f"Built EMNIST model n={num_qubits} P={model.num_params} d={num_features} "
        f"gates={len(instructions)}"
    )
    return model


def cluster_prep_instructions(alloc: _SlotAllocator, num_qubits: int, data_bound: bool = True) -> List[Instruction]:
    """H on every qubit (fixed SU2), CZ chain, then Rx(α_i) bound to data index i."""
    instructions = [
        Instruction(GateKind.SU2, (q,), tuple(alloc.fixed(a) for a in _HADAMARD_ANGLES))
        for q in range(num_qubits)
    ]
    instructions.extend(Instruction(GateKind.CZ, (q, q + 1)) for q in range(num_qubits - 1))
    if data_bound:
        instructions.extend(Instruction(GateKind.RX, (q,), (alloc.data(q),)) for q in range(num_qubits))
    return instructions


def build_cluster_circuit(num_qubits: int) -> Circuit:
    """Parameter-free circuit preparing |LC_n⟩ from |0…0⟩."""
    if num_qubits < 2:
        raise CircuitError("a linear cluster state needs at least two qubits")
    alloc = _SlotAllocator()
    return Circuit(num_qubits, tuple(cluster_prep_instructions(alloc, num_qubits, data_bound=False)), 0, 0)


def build_lcei_model(num_qubits: int, block_sizes: Sequence[int]) -> QnnModel:
    """
    Cluster-state excitation classifier: cluster preparation with data-only
    Rx(α_i) rotations, followed by the variational stage with every angle
    trainable.
    """
    if num_qubits < 2:
        raise CircuitError("LCEI model needs at least two qubits")
    block_sizes = tuple(int(b) for b in block_sizes)
    _validate_blocks(num_qubits, block_sizes)
    alloc = _SlotAllocator()
    prep = cluster_prep_instructions(alloc, num_qubits)
    variational = _variational_stage(alloc, num_qubits, block_sizes, 0)
    circuit = Circuit(num_qubits, tuple(prep + variational), alloc.next_trainable, num_qubits)
    return QnnModel(
        circuit=circuit,
        num_qubits=num_qubits,
        num_params=alloc.next_trainable,
        num_features=num_qubits,
        output_qubit=num_qubits // 2,
        task=Task.LCEI,
        block_sizes=block_sizes,
        prep_length=len(prep),
    )


def build_model(task: Union[str, Task], num_qubits: int, block_sizes: Sequence[int], num_features: int = 0) -> QnnModel:
    task = Task(task)
    if task is Task.EMNIST:
        return build_emnist_model(num_qubits, block_sizes, num_features)
    return build_lcei_model(num_qubits, block_sizes)


def final_state(model: QnnModel, theta: Sequence[float], x: Sequence[float]) -> StateVector:
    gates = model.circuit.bind(theta, x)
    return apply_gates(StateVector.zero(model.num_qubits), gates, inplace=True)


def probability_from_state(model: QnnModel, state: StateVector) -> float:
    return 0.5 * (expectation_z(state, model.output_qubit) + 1.0)


def predict(
    model: QnnModel,
    theta: Sequence[float],
    x: Sequence[float],
    shots: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> Prediction:
    """
    Evaluate the classifier. Exact mode uses p = (⟨σz⟩+1)/2; with ``shots``
    the probability is the observed frequency of outcome 0.
    """
    state = final_state(model, theta, x)
    if shots is None:
        return Prediction.from_probability(probability_from_state(model, state))
    if rng is None:
        raise ValidationError("finite-shot prediction needs a seeded generator", field_name="rng")
    counts = sample_counts(state, model.output_qubit, shots, rng)
    return Prediction.from_probability(counts[0] / shots)


def _clamp(p: float) -> float:
    return min(max(p, PROB_CLAMP), 1.0 - PROB_CLAMP)


def cross_entropy(p: float, label: int) -> float:
    """Binary cross-entropy of a predicted label-1 probability."""
    q = _clamp(p)
    return -(label * math.log(q) + (1 - label) * math.log(1.0 - q))


def cross_entropy_derivative(p: float, label: int) -> float:
    """dL/dp at the clamped probability."""
    q = _clamp(p)
    return -label / q + (1 - label) / (1.0 - q)


def initial_parameters(model: QnnModel, rng: np.random.Generator, scale: float = math.pi) -> np.ndarray:
    """θ drawn uniformly from [−scale, scale)."""
    return rng.uniform(-scale, scale, size=model.num_params)


def save_model(path: Union[str, Path], model: QnnModel, theta: Sequence[float], metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write the architecture and θ as one JSON document."""
    document = {
        "model": model.to_dict(),
        "theta": [float(t) for t in np.asarray(theta, dtype=np.float64)],
        "metadata": metadata or {},
    }
    return write_json(path, document)


def load_model(path: Union[str, Path]) -> Tuple[QnnModel, np.ndarray, Dict[str, Any]]:
    document = read_json(path)
    model = QnnModel.from_dict(document["model"])
    theta = np.asarray(document["theta"], dtype=np.float64)
    if theta.shape != (model.num_params,):
        raise CircuitError(f"stored θ has {theta.size} entries, model expects {model.num_params}")
    return model, theta, document.get("metadata", {})
