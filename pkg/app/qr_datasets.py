"""
QRobust Datasets Module
EMNIST letter ingestion and preprocessing, synthetic LCEI quantum data, and
the ``.npz`` dataset cache.
"""

import gzip
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from qr_errors import DataError, FileOperationError, ValidationError
from qr_files import array_digest, atomic_write
from qr_logging import get_logger
from qr_utils import SeedStreams

logger = get_logger(__name__)

# EMNIST-letters label codes (1-26 mapping)
LETTER_CODES = {chr(ord("A") + i): i + 1 for i in range(26)}

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

PIXEL_SCALE = math.pi
LCEI_LOW = (0.0, 3.0 * math.pi / 8.0)
LCEI_HIGH = (5.0 * math.pi / 8.0, math.pi)
LCEI_RANGE = (0.0, math.pi)

SPLITS = ("train", "test")


@dataclass(frozen=True, eq=False)
class Sample:
    """Feature vector, binary label and a dataset-unique id."""

    features: np.ndarray
    label: int
    sample_id: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 1:
            raise ValidationError("features must be a vector", field_name="features", field_value=features.shape)
        if self.label not in (0, 1):
            raise ValidationError("label must be 0 or 1", field_name="label", field_value=self.label)
        features.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "sample_id", int(self.sample_id))

    def with_features(self, features: Sequence[float]) -> "Sample":
        return Sample(features=np.asarray(features, dtype=np.float64), label=self.label, sample_id=self.sample_id)


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Immutable sample collection. ``feature_range`` gives (x_min, x_max)
    for normalising perturbation strengths.
    """

    samples: Tuple[Sample, ...]
    split: str
    feature_range: Tuple[float, float]
    task: str = "emnist"
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        lo, hi = self.feature_range
        if not hi > lo:
            raise ValidationError(
                "feature range needs x_max > x_min", field_name="feature_range", field_value=self.feature_range
            )
        dims = {s.features.size for s in self.samples}
        if len(dims) > 1:
            raise ValidationError("samples have mixed feature lengths", field_name="features", field_value=sorted(dims))
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate sample ids", field_name="sample_id")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __getitem__(self, index: int) -> Sample:
        return self.samples[index]

    @property
    def num_features(self) -> int:
        return self.samples[0].features.size if self.samples else 0

    @property
    def span(self) -> float:
        return self.feature_range[1] - self.feature_range[0]

    def features_matrix(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, 0))
        return np.stack([s.features for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def ids(self) -> np.ndarray:
        return np.array([s.sample_id for s in self.samples], dtype=np.int64)

    def class_counts(self) -> Dict[int, int]:
        labels = self.labels()
        return {0: int(np.sum(labels == 0)), 1: int(np.sum(labels == 1))}

    def by_id(self, sample_id: int) -> Sample:
        for s in self.samples:
            if s.sample_id == sample_id:
                return s
        raise DataError(f"sample {sample_id} not in {self.split} set")

    def take(self, count: int) -> "Dataset":
        """First ``count`` samples (the split order is already random)."""
        return self.with_samples(self.samples[:count])

    def with_samples(self, samples: Sequence[Sample], **metadata) -> "Dataset":
        return Dataset(
            samples=tuple(samples),
            split=self.split,
            feature_range=self.feature_range,
            task=self.task,
            metadata={**self.metadata, **metadata},
        )

    def digest(self) -> str:
        return array_digest(self.features_matrix(), self.labels(), self.ids())

    @classmethod
    def from_arrays(
        cls,
        features: np.ndarray,
        labels: Sequence[int],
        ids: Sequence[int],
        split: str,
        feature_range: Tuple[float, float],
        task: str = "emnist",
        metadata: Optional[Dict[str, Any]] = None,
    ) -> "Dataset":
        samples = tuple(Sample(f, int(l), int(i)) for f, l, i in zip(np.asarray(features), labels, ids))
        return cls(samples, split, tuple(float(v) for v in feature_range), task, dict(metadata or {}))


# IDX parsing


def _open_maybe_gzip(path: Path):
    with open(path, "rb") as handle:
        head = handle.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path: Union[str, Path]) -> np.ndarray:
    """Decode an IDX ubyte file (optionally gzip-compressed) into a uint8 array."""
    path = Path(path)
    if not path.exists():
        gz = path.with_name(path.name + ".gz")
        if gz.exists():
            path = gz
        else:
            raise DataError(f"IDX file not found: {path}", data_source=str(path), expected_format="IDX ubyte")
    try:
        with _open_maybe_gzip(path) as handle:
            raw = handle.read()
    except OSError as e:
        raise FileOperationError(f"Cannot read {path}: {e}", file_path=str(path), operation="read")

    if len(raw) < 8:
        raise DataError(f"truncated IDX header in {path}", data_source=str(path), expected_format="IDX ubyte")
    magic = int.from_bytes(raw[:4], "big")
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise DataError(f"bad IDX magic 0x{magic:08x} in {path}", data_source=str(path), expected_format="IDX ubyte")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    shape = tuple(int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim))
    expected = int(np.prod(shape))
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if payload.size != expected:
        raise DataError(
            f"IDX payload in {path} has {payload.size} bytes, header declares {expected}",
            data_source=str(path),
            expected_format="IDX ubyte",
        )
    return payload.reshape(shape)


# Quadratic resize


def quadratic_kernel(t: np.ndarray) -> np.ndarray:
    """
    Interpolating piecewise-quadratic kernel with support [-3/2, 3/2]:
    1 - 2t² for |t| <= 1/2, t² - 5|t|/2 + 3/2 for 1/2 < |t| <= 3/2.
    """
    a = np.abs(np.asarray(t, dtype=np.float64))
    inner = 1.0 - 2.0 * a * a
    outer = a * a - 2.5 * a + 1.5
    return np.where(a <= 0.5, inner, np.where(a <= 1.5, outer, 0.0))


def resize_matrix(size_in: int, size_out: int) -> np.ndarray:
    """
    (size_out, size_in) interpolation matrix along one axis.

    Pixel centres are aligned, the kernel is widened by the reduction factor
    when downsampling, edges are replicated and each row sums to one.
    """
    if size_in < 1 or size_out < 1:
        raise ValidationError("resize dimensions must be positive", field_name="size", field_value=(size_in, size_out))
    scale = size_out / size_in
    stretch = min(scale, 1.0)
    support = 1.5 / stretch
    matrix = np.zeros((size_out, size_in))
    for i in range(size_out):
        center = (i + 0.5) / scale - 0.5
        lo = int(math.floor(center - support))
        hi = int(math.ceil(center + support))
        for j in range(lo, hi + 1):
            w = float(quadratic_kernel((center - j) * stretch))
            if w != 0.0:
                matrix[i, min(max(j, 0), size_in - 1)] += w
    matrix /= matrix.sum(axis=1, keepdims=True)
    return matrix


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    """Separable quadratic resize of an image in [0, 1] to ``size``×``size``."""
    image = np.asarray(image, dtype=np.float64)
    rows = resize_matrix(image.shape[0], size)
    cols = resize_matrix(image.shape[1], size)
    return np.clip(rows @ image @ cols.T, 0.0, 1.0)


def central_window(image: np.ndarray, window: int) -> np.ndarray:
    size = image.shape[0]
    if window > size:
        raise ValidationError(f"window {window} exceeds image size {size}", field_name="window", field_value=window)
    start = (size - window) // 2
    return image[start : start + window, start : start + window]


def image_to_angles(image: np.ndarray, resolution: int, window: int) -> np.ndarray:
    """uint8 28×28 image → resized, windowed pixel angles in [0, π]."""
    scaled = np.asarray(image, dtype=np.float64) / 255.0
    return central_window(resize_image(scaled, resolution), window).ravel() * PIXEL_SCALE


def image_to_raw(image: np.ndarray, resolution: int) -> np.ndarray:
    """Full resized image in [0, 1], flattened (the FNN representation)."""
    return resize_image(np.asarray(image, dtype=np.float64) / 255.0, resolution).ravel()


# Synthetic letters


def synthetic_letters(per_class: int, seed: int, size: int = 28) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stand-in images when EMNIST is unavailable: jittered rings with a tail
    (class 'Q', code 17) and T-bars (class 'T', code 20), uint8.
    """
    rng = SeedStreams(seed).generator("synthetic-letters")
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images, labels = [], []
    for _ in range(per_class):
        cy, cx = size / 2 + rng.normal(0, 1.0, 2)
        radius = rng.uniform(6.5, 9.0)
        width = rng.uniform(1.2, 2.0)
        ring = np.exp(-((np.hypot(yy - cy, xx - cx) - radius) ** 2) / (2 * width**2))
        tail = np.exp(-((yy - xx - (cy - cx) - 0.0) ** 2) / (2 * width**2)) * (yy > cy + radius * 0.5) * (
            yy < cy + radius * 1.3
        )
        images.append(np.maximum(ring, tail))
        labels.append(LETTER_CODES["Q"])
    for _ in range(per_class):
        top = size * 0.22 + rng.normal(0, 1.0)
        cx = size / 2 + rng.normal(0, 1.0)
        half = rng.uniform(7.0, 10.0)
        width = rng.uniform(1.2, 2.0)
        bar = np.exp(-((yy - top) ** 2) / (2 * width**2)) * (np.abs(xx - cx) < half)
        stem = np.exp(-((xx - cx) ** 2) / (2 * width**2)) * (yy > top) * (yy < size * 0.85)
        images.append(np.maximum(bar, stem))
        labels.append(LETTER_CODES["T"])
    stack = np.stack(images) + rng.normal(0, 0.03, (2 * per_class, size, size))
    return (np.clip(stack, 0.0, 1.0) * 255).round().astype(np.uint8), np.array(labels, dtype=np.uint8)


def _check_rendering(images_by_class: Dict[int, np.ndarray]) -> Dict[str, float]:
    """
    Class-mean sanity check on oriented 28×28 images: a 'T' has its stem
    through the centre and a 'Q' a hollow centre.
    """
    means = {label: imgs.astype(np.float64).mean(axis=0) / 255.0 for label, imgs in images_by_class.items()}
    q_mean, t_mean = means[0], means[1]
    c = q_mean.shape[0] // 2
    centre_q = float(q_mean[c - 2 : c + 2, c - 1 : c + 1].mean())
    centre_t = float(t_mean[c - 2 : c + 2, c - 1 : c + 1].mean())
    stats = {"centre_mean_q": centre_q, "centre_mean_t": centre_t}
    if not centre_t > centre_q:
        logger.warning(
            "EMNIST rendering check failed: class means do not look like Q/T "
            f"(centre Q={centre_q:.3f}, T={centre_t:.3f}); check letter codes and orientation"
        )
    return stats


def _split(
    samples: List[Sample], train_size: int, rng: np.random.Generator
) -> Tuple[List[Sample], List[Sample]]:
    order = rng.permutation(len(samples))
    shuffled = [samples[i] for i in order]
    return shuffled[:train_size], shuffled[train_size:]


def load_emnist(
    path: Union[str, Path],
    letters: Sequence[str] = ("Q", "T"),
    per_class: int = 300,
    train_size: int = 500,
    seed: int = 0,
    resolution: int = 15,
    window: int = 13,
    image_file: str = "emnist-letters-train-images-idx3-ubyte",
    label_file: str = "emnist-letters-train-labels-idx1-ubyte",
    representation: str = "angles",
    synthetic_fallback: bool = False,
) -> Tuple[Dataset, Dataset]:
    """
    Two-letter EMNIST subset as (train, test).

    The first letter maps to label 0 and the second to label 1. ``per_class``
    images of each are drawn, preprocessed and split ``train_size`` / rest.
    ``representation='angles'`` gives central-window pixel angles in [0, π];
    ``'raw'`` gives the full resized image in [0, 1].
    """
    if len(letters) != 2:
        raise ValidationError("exactly two letters are required", field_name="letters", field_value=letters)
    if representation not in ("angles", "raw"):
        raise ValidationError("unknown representation", field_name="representation", field_value=representation)
    if not 0 < train_size < 2 * per_class:
        raise ValidationError("train_size must leave a nonempty test split", field_name="train_size", field_value=train_size)
    codes = [LETTER_CODES[letter.upper()] for letter in letters]

    directory = Path(path)
    image_path = directory / image_file
    label_path = directory / label_file
    source = "emnist"
    try:
        images = read_idx(image_path)
        labels = read_idx(label_path)
    except DataError:
        if not synthetic_fallback:
            raise DataError(
                f"EMNIST letters not found: expected {image_path} and {label_path} (optionally .gz); "
                "download EMNIST or enable data.synthetic_fallback",
                data_source=str(directory),
                expected_format="IDX ubyte",
            )
        logger.warning("EMNIST files missing; using synthetic Q/T images")
        images, labels = synthetic_letters(per_class, seed)
        images = np.transpose(images, (0, 2, 1))
        codes = [LETTER_CODES["Q"], LETTER_CODES["T"]]
        source = "synthetic"

    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise DataError(
            f"image/label shapes disagree: {images.shape} vs {labels.shape}", data_source=str(directory)
        )

    streams = SeedStreams(seed)
    select_rng = streams.generator("data-split", 0)
    chosen: Dict[int, np.ndarray] = {}
    for label, code in enumerate(codes):
        indices = np.flatnonzero(labels == code)
        if indices.size < per_class:
            raise DataError(
                f"letter code {code} has {indices.size} images, {per_class} required",
                data_source=str(directory),
            )
        chosen[label] = np.sort(select_rng.choice(indices, size=per_class, replace=False))

    # EMNIST stores images transposed
    oriented = {label: np.transpose(images[idx], (0, 2, 1)) for label, idx in chosen.items()}
    rendering = _check_rendering(oriented)

    samples = []
    for label, idx in chosen.items():
        for file_index, image in zip(idx, oriented[label]):
            if representation == "angles":
                features = image_to_angles(image, resolution, window)
            else:
                features = image_to_raw(image, resolution)
            samples.append(Sample(features, label, int(file_index)))

    train, test = _split(samples, train_size, streams.generator("data-split", 1))
    feature_range = (0.0, PIXEL_SCALE) if representation == "angles" else (0.0, 1.0)
    metadata = {
        "source": source,
        "letters": list(letters),
        "codes": codes,
        "seed": seed,
        "resolution": resolution,
        "window": window,
        "representation": representation,
        "rendering_check": rendering,
    }
    result = tuple(
        Dataset(tuple(part), split, feature_range, "emnist", dict(metadata))
        for part, split in ((train, "train"), (test, "test"))
    )
    result = tuple(ds.with_samples(ds.samples, class_counts=ds.class_counts()) for ds in result)
    logger.info(
        f"Loaded {source} {letters[0]}/{letters[1]}: train {result[0].class_counts()}, "
        f"test {result[1].class_counts()}, {result[0].num_features} features"
    )
    return result


def gen_lcei(
    num_qubits: int = 20,
    per_class: int = 150,
    train_size: int = 200,
    seed: int = 0,
    per_qubit: bool = False,
) -> Tuple[Dataset, Dataset]:
    """
    Linear-cluster excitation data as (train, test).

    Non-excited samples (label 0) draw α from [0, 3π/8], excited samples
    (label 1) from [5π/8, π]. One α is shared by all qubits unless
    ``per_qubit`` (experimental) draws each qubit's angle independently from
    the class interval.
    """
    if not 0 < train_size < 2 * per_class:
        raise ValidationError("train_size must leave a nonempty test split", field_name="train_size", field_value=train_size)
    streams = SeedStreams(seed)
    rng = streams.generator("data-split", 2)
    samples = []
    sample_id = 0
    for label, (lo, hi) in enumerate((LCEI_LOW, LCEI_HIGH)):
        for _ in range(per_class):
            if per_qubit:
                alphas = rng.uniform(lo, hi, size=num_qubits)
            else:
                alphas = np.full(num_qubits, rng.uniform(lo, hi))
            samples.append(Sample(alphas, label, sample_id))
            sample_id += 1
    train, test = _split(samples, train_size, streams.generator("data-split", 3))
    metadata = {"source": "lcei", "seed": seed, "num_qubits": num_qubits, "per_qubit": per_qubit}
    result = tuple(
        Dataset(tuple(part), split, LCEI_RANGE, "lcei", dict(metadata))
        for part, split in ((train, "train"), (test, "test"))
    )
    return tuple(ds.with_samples(ds.samples, class_counts=ds.class_counts()) for ds in result)


# Cache


def save_dataset(path: Union[str, Path], dataset: Dataset) -> Path:
    """Write features, labels, ids and JSON metadata to an ``.npz`` file."""
    meta = {
        "split": dataset.split,
        "task": dataset.task,
        "feature_range": list(dataset.feature_range),
        "metadata": dataset.metadata,
    }

    def _writer(temp_name: str) -> None:
        with open(temp_name, "wb") as handle:
            np.savez(
                handle,
                features=dataset.features_matrix(),
                labels=dataset.labels(),
                ids=dataset.ids(),
                metadata=np.array(json.dumps(meta, sort_keys=True, default=str)),
            )

    return atomic_write(path, _writer)


def load_dataset(path: Union[str, Path]) -> Dataset:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            features = data["features"]
            labels = data["labels"]
            ids = data["ids"]
            meta = json.loads(str(data["metadata"]))
    except (OSError, KeyError, ValueError) as e:
        raise FileOperationError(f"Cannot load dataset cache {path}: {e}", file_path=str(path), operation="read")
    return Dataset.from_arrays(
        features, labels, ids, meta["split"], tuple(meta["feature_range"]), meta["task"], meta["metadata"]
    )


def datasets_for(run, representation: Optional[str] = None) -> Tuple[Dataset, Dataset]:
    """Build (train, test) for a resolved run configuration."""
    d = run.data
    if run.task == "lcei":
        return gen_lcei(run.model.num_qubits, d.lcei_per_class, d.lcei_train_size, run.seed, d.lcei_per_qubit)
    if representation is None:
        representation = "raw" if run.task == "fnn" else "angles"
    return load_emnist(
        d.emnist_dir,
        d.letters,
        d.per_class,
        d.train_size,
        run.seed,
        d.resolution,
        d.window,
        d.image_file,
        d.label_file,
        representation,
        d.synthetic_fallback,
    )
