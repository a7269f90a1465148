"""
QRobust Configuration Management Module
Layered run configuration: section YAML defaults, named profiles, a run file
and command-line overrides, validated into dataclass sections.
"""

import copy
import math
import typing
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from qr_errors import ConfigurationError
from qr_logging import get_logger

logger = get_logger(__name__)

DEFAULT_CONFIG_DIR = Path(__file__).resolve().parent / "config"

TASKS = ("emnist", "lcei", "fnn")
PROFILES = ("paper-20q", "desk-12q")


@dataclass
class SystemConfig:
    """Runtime, logging and performance settings."""

    log_level: str = "INFO"
    log_file: str = "logs/qrobust.log"
    json_logs: bool = True
    colored_console: bool = True
    workers: int = 1
    use_numba: bool = True
    prefix_cache_mb: int = 512
    export_plots: bool = False


@dataclass
class DataConfig:
    """Dataset sources and preprocessing."""

    emnist_dir: str = "data/emnist"
    image_file: str = "emnist-letters-train-images-idx3-ubyte"
    label_file: str = "emnist-letters-train-labels-idx1-ubyte"
    letters: List[str] = field(default_factory=lambda: ["Q", "T"])
    per_class: int = 300
    train_size: int = 500
    resolution: int = 15
    window: int = 13
    synthetic_fallback: bool = False
    lcei_per_class: int = 150
    lcei_train_size: int = 200
    lcei_per_qubit: bool = False


@dataclass
class ModelConfig:
    """QNN architecture."""

    num_qubits: int = 20
    block_sizes: List[int] = field(default_factory=lambda: [20, 16, 12, 8, 4])
    fnn_hidden: int = 5


@dataclass
class TrainingConfig:
    """Optimiser and schedule settings."""

    batch_size: int = 100
    epochs: int = 20
    learning_rate: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    adversarial_mix: float = 0.5
    init_scale: float = math.pi
    gradient_shots: Optional[int] = None


@dataclass
class AttackConfig:
    """Mask FGSM and robustness analysis settings."""

    mask_fraction: float = 0.15
    gradient_samples: int = 20
    lcei_mask: str = "central"
    eps_max: float = 1.0
    eps_points: int = 41
    attack_split: str = "train"
    attack_samples: int = 200
    adversarial_eps_hat: float = 0.1
    adversarial_per_class: int = 100
    sensitivity_eps_hat: float = 0.1
    linear_fit_max: float = 0.3
    mask_fraction_sweep: List[float] = field(
        default_factory=lambda: [0.05, 0.1, 0.15, 0.25, 0.5, 1.0]
    )
    critical_fraction: float = 0.2
    soundness_samples: int = 10
    soundness_trials: int = 100

    def eps_grid(self) -> List[float]:
        if self.eps_points == 1:
            return [0.0]
        step = self.eps_max / (self.eps_points - 1)
        return [i * step for i in range(self.eps_points)]


@dataclass
class NoiseConfig:
    """Decoherence defaults for the composite damping channel (seconds)."""

    t1: float = 19.57e-6
    t2: float = 2.29e-6
    duration: float = 1.2e-6
    coherence_model: str = "channel"


@dataclass
class ReadoutConfig:
    """Readout assignment error and unfolding."""

    fidelity0: float = 0.959
    fidelity1: float = 0.891
    shots: int = 10000
    ibu_iterations: int = 50
    ibu_tolerance: float = 0.0


SECTION_CLASSES = {
    "system": SystemConfig,
    "data": DataConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "attack": AttackConfig,
    "noise": NoiseConfig,
    "readout": ReadoutConfig,
}

TOP_LEVEL_KEYS = ("task", "profile", "seed", "output_dir")


@dataclass
class RunConfig:
    """Fully resolved configuration of a pipeline run."""

    task: str = "lcei"
    profile: str = "desk-12q"
    seed: int = 1234
    output_dir: str = "runs/default"
    system: SystemConfig = field(default_factory=SystemConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        config = cls()
        _merge_run_dict(config, data, source="<dict>")
        ConfigValidator.raise_for(config)
        return config

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)


def _coerce(path: str, value: Any, hint: Any, source: str) -> Any:
    """Coerce a YAML scalar to the annotated type of a config field."""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)

    if origin is Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(path, value, inner[0], source)

    if origin in (list, List):
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(
                f"{path}: expected a list, got {type(value).__name__}",
                config_key=path,
                config_file=source,
            )
        item_hint = args[0] if args else Any
        return [_coerce(f"{path}[{i}]", v, item_hint, source) for i, v in enumerate(value)]

    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(
                f"{path}: expected true/false, got {value!r}", config_key=path, config_file=source
            )
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(
                f"{path}: expected an integer, got {value!r}", config_key=path, config_file=source
            )
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(
                f"{path}: expected a number, got {value!r}", config_key=path, config_file=source
            )
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigurationError(
                f"{path}: expected a string, got {value!r}", config_key=path, config_file=source
            )
        return value
    return value


def _apply_section(instance: Any, section: str, data: Dict[str, Any], source: str) -> None:
    if not isinstance(data, dict):
        raise ConfigurationError(
            f"{section}: expected a mapping", config_key=section, config_file=source
        )
    hints = typing.get_type_hints(type(instance))
    names = {f.name for f in fields(instance)}
    for key, value in data.items():
        path = f"{section}.{key}"
        if key not in names:
            raise ConfigurationError(
                f"Unknown configuration key '{path}'", config_key=path, config_file=source
            )
        setattr(instance, key, _coerce(path, value, hints[key], source))


def _merge_run_dict(config: RunConfig, data: Dict[str, Any], source: str) -> None:
    if not isinstance(data, dict):
        raise ConfigurationError("Run configuration must be a mapping", config_file=source)
    for key, value in data.items():
        if key in SECTION_CLASSES:
            _apply_section(getattr(config, key), key, value or {}, source)
        elif key in TOP_LEVEL_KEYS:
            hint = typing.get_type_hints(RunConfig)[key]
            setattr(config, key, _coerce(key, value, hint, source))
        else:
            raise ConfigurationError(
                f"Unknown configuration key '{key}'", config_key=key, config_file=source
            )


class ConfigValidator:
    """Validates configuration parameters and constraints."""

    @staticmethod
    def validate_run(config: RunConfig) -> List[str]:
        errors = []
        if config.task not in TASKS:
            errors.append(f"task must be one of {TASKS}, got '{config.task}'")
        if config.profile not in PROFILES:
            errors.append(f"profile must be one of {PROFILES}, got '{config.profile}'")
        if config.seed < 0:
            errors.append("seed must be nonnegative")
        return errors

    @staticmethod
    def validate_system(config: SystemConfig) -> List[str]:
        errors = []
        if config.workers < 1:
            errors.append("system.workers must be >= 1")
        if config.prefix_cache_mb < 0:
            errors.append("system.prefix_cache_mb must be >= 0")
        return errors

    @staticmethod
    def validate_data(config: DataConfig) -> List[str]:
        errors = []
        if len(config.letters) != 2:
            errors.append("data.letters must name exactly two letters")
        if config.train_size >= 2 * config.per_class:
            errors.append("data.train_size must leave a nonempty test split")
        if config.lcei_train_size >= 2 * config.lcei_per_class:
            errors.append("data.lcei_train_size must leave a nonempty test split")
        if config.window > config.resolution:
            errors.append("data.window must not exceed data.resolution")
        return errors

    @staticmethod
    def validate_model(config: ModelConfig) -> List[str]:
        errors = []
        if config.num_qubits < 2:
            errors.append("model.num_qubits must be >= 2")
        sizes = config.block_sizes
        if any(b < 1 or b > config.num_qubits for b in sizes):
            errors.append("model.block_sizes entries must lie in [1, num_qubits]")
        if any(a < b for a, b in zip(sizes, sizes[1:])):
            errors.append("model.block_sizes must be nonincreasing")
        return errors

    @staticmethod
    def validate_training(config: TrainingConfig) -> List[str]:
        errors = []
        if config.batch_size < 1:
            errors.append("training.batch_size must be >= 1")
        if config.epochs < 0:
            errors.append("training.epochs must be >= 0")
        if config.learning_rate <= 0:
            errors.append("training.learning_rate must be positive")
        if not (0.0 <= config.beta1 < 1.0 and 0.0 <= config.beta2 < 1.0):
            errors.append("training.beta1 and training.beta2 must lie in [0, 1)")
        if not 0.0 <= config.adversarial_mix <= 1.0:
            errors.append("training.adversarial_mix must lie in [0, 1]")
        if config.gradient_shots is not None and config.gradient_shots < 1:
            errors.append("training.gradient_shots must be >= 1 when set")
        return errors

    @staticmethod
    def validate_attack(config: AttackConfig) -> List[str]:
        errors = []
        if not 0.0 < config.mask_fraction <= 1.0:
            errors.append("attack.mask_fraction must lie in (0, 1]")
        if config.gradient_samples < 1:
            errors.append("attack.gradient_samples must be >= 1")
        if config.lcei_mask not in ("central", "gradient"):
            errors.append("attack.lcei_mask must be 'central' or 'gradient'")
        if config.eps_max <= 0 or config.eps_points < 2:
            errors.append("attack.eps_max must be positive and attack.eps_points >= 2")
        if config.attack_split not in ("train", "test"):
            errors.append("attack.attack_split must be 'train' or 'test'")
        if config.sensitivity_eps_hat <= 0 or config.adversarial_eps_hat < 0:
            errors.append("attack.sensitivity_eps_hat must be positive")
        if config.sensitivity_eps_hat > config.eps_max:
            errors.append("attack.sensitivity_eps_hat must not exceed attack.eps_max")
        if config.adversarial_per_class < 1:
            errors.append("attack.adversarial_per_class must be >= 1")
        if any(not 0.0 < r <= 1.0 for r in config.mask_fraction_sweep):
            errors.append("attack.mask_fraction_sweep entries must lie in (0, 1]")
        if not 0.0 < config.critical_fraction <= 1.0:
            errors.append("attack.critical_fraction must lie in (0, 1]")
        return errors

    @staticmethod
    def validate_noise(config: NoiseConfig) -> List[str]:
        errors = []
        if config.t1 <= 0 or config.t2 <= 0 or config.duration <= 0:
            errors.append("noise.t1, noise.t2 and noise.duration must be positive")
        if config.coherence_model not in ("channel", "combined-time"):
            errors.append(f"noise.coherence_model must be channel or combined-time, got {config.coherence_model!r}")
        return errors

    @staticmethod
    def validate_readout(config: ReadoutConfig) -> List[str]:
        errors = []
        for name in ("fidelity0", "fidelity1"):
            value = getattr(config, name)
            if not 0.5 < value <= 1.0:
                errors.append(f"readout.{name} must lie in (0.5, 1]")
        if config.shots < 1 or config.ibu_iterations < 1:
            errors.append("readout.shots and readout.ibu_iterations must be >= 1")
        return errors

    @classmethod
    def validate(cls, config: RunConfig) -> List[str]:
        errors = cls.validate_run(config)
        errors.extend(cls.validate_system(config.system))
        errors.extend(cls.validate_data(config.data))
        errors.extend(cls.validate_model(config.model))
        errors.extend(cls.validate_training(config.training))
        errors.extend(cls.validate_attack(config.attack))
        errors.extend(cls.validate_noise(config.noise))
        errors.extend(cls.validate_readout(config.readout))
        return errors

    @classmethod
    def raise_for(cls, config: RunConfig) -> None:
        errors = cls.validate(config)
        if errors:
            raise ConfigurationError(
                "Configuration validation errors:\n" + "\n".join(errors),
                context={"errors": errors},
            )


class ConfigurationManager:
    """Resolves a RunConfig from section files, profiles, a run file and overrides."""

    SECTION_FILES = {name: f"{name}.yaml" for name in SECTION_CLASSES}

    def __init__(self, config_dir: Union[str, Path] = DEFAULT_CONFIG_DIR, write_defaults: bool = True):
        """
        Args:
            config_dir: Directory containing section YAML files and profiles.yaml
            write_defaults: Create missing section files from the dataclass defaults
        """
        self.config_dir = Path(config_dir)
        self.write_defaults = write_defaults
        self.loaded_files: List[str] = []
        self.base = RunConfig()
        self.profiles: Dict[str, Dict[str, Any]] = {}
        self._load_sections()
        self._load_profiles()

    def _load_sections(self) -> None:
        for section, filename in self.SECTION_FILES.items():
            path = self.config_dir / filename
            instance = getattr(self.base, section)
            if not path.exists():
                logger.debug(f"Config file not found: {path}, using defaults")
                if self.write_defaults:
                    self._save_default_config(path, instance)
                continue
            data = self._read_yaml(path)
            _apply_section(instance, section, data, str(path))
            self.loaded_files.append(str(path))

    def _load_profiles(self) -> None:
        path = self.config_dir / "profiles.yaml"
        if path.exists():
            self.profiles = self._read_yaml(path)
            self.loaded_files.append(str(path))
        unknown = set(self.profiles) - set(PROFILES)
        if unknown:
            raise ConfigurationError(
                f"Unknown profiles in {path}: {sorted(unknown)}", config_file=str(path)
            )

    @staticmethod
    def _read_yaml(path: Path) -> Dict[str, Any]:
        try:
            with open(path, "r", encoding="utf-8") as f:
                return yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigurationError(f"Failed to load {path}: {e}", config_file=str(path))

    def _save_default_config(self, file_path: Path, config_instance: Any) -> None:
        try:
            file_path.parent.mkdir(parents=True, exist_ok=True)
            with open(file_path, "w", encoding="utf-8") as f:
                yaml.safe_dump(asdict(config_instance), f, default_flow_style=False, indent=2)
            logger.info(f"Created default config file: {file_path}")
        except OSError as e:
            logger.warning(f"Failed to save default config {file_path}: {e}")

    def _apply_profile(self, config: RunConfig) -> None:
        profile = self.profiles.get(config.profile, {})
        source = f"{self.config_dir / 'profiles.yaml'}#{config.profile}"
        for key, value in profile.items():
            if key == "tasks":
                task_overrides = (value or {}).get(config.task, {})
                _merge_run_dict(config, task_overrides, source)
            elif key in SECTION_CLASSES:
                _apply_section(getattr(config, key), key, value or {}, source)
            else:
                raise ConfigurationError(
                    f"Unknown profile key '{config.profile}.{key}'",
                    config_key=key,
                    config_file=source,
                )

    def resolve(
        self,
        run_file: Optional[Union[str, Path]] = None,
        task: Optional[str] = None,
        profile: Optional[str] = None,
        seed: Optional[int] = None,
        output_dir: Optional[str] = None,
    ) -> RunConfig:
        """
        Build the run configuration. Precedence, lowest first: section files,
        profile (and its per-task block), run file, explicit arguments.
        """
        config = copy.deepcopy(self.base)
        run_data: Dict[str, Any] = {}
        if run_file is not None:
            run_data = self._read_yaml(Path(run_file))
            if not isinstance(run_data, dict):
                raise ConfigurationError("Run file must be a mapping", config_file=str(run_file))

        # task and profile pick the profile block, so settle them first
        config.task = task or run_data.get("task", config.task)
        config.profile = profile or run_data.get("profile", config.profile)
        if config.profile not in PROFILES:
            raise ConfigurationError(
                f"Unknown profile '{config.profile}'", config_key="profile"
            )
        self._apply_profile(config)

        if run_data:
            _merge_run_dict(config, run_data, str(run_file))
        if task:
            config.task = task
        if profile:
            config.profile = profile
        if seed is not None:
            config.seed = seed
        if output_dir:
            config.output_dir = output_dir

        ConfigValidator.raise_for(config)
        logger.debug(f"Resolved configuration task={config.task} profile={config.profile}")
        return config


def load_run_config(
    run_file: Optional[Union[str, Path]] = None,
    config_dir: Union[str, Path] = DEFAULT_CONFIG_DIR,
    **overrides,
) -> RunConfig:
    """Convenience wrapper around ConfigurationManager.resolve."""
    manager = ConfigurationManager(config_dir, write_defaults=False)
    return manager.resolve(run_file=run_file, **overrides)
