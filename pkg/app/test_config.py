"""Configuration resolution and validation tests."""

import pytest
import yaml

from qr_config import (
    DEFAULT_CONFIG_DIR,
    AttackConfig,
    ConfigurationManager,
    ConfigValidator,
    RunConfig,
    load_run_config,
)
from qr_errors import ConfigurationError


def _write(path, data):
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def test_shipped_configuration_is_valid():
    config = load_run_config()
    assert ConfigValidator.validate(config) == []
    assert config.noise.coherence_model == "channel"
    assert config.readout.fidelity0 == pytest.approx(0.959)


def test_profile_and_task_block_apply():
    wide = load_run_config(task="emnist", profile="paper-20q")
    assert wide.model.num_qubits == 20
    assert wide.training.learning_rate == pytest.approx(0.1)
    desk = load_run_config(task="lcei", profile="desk-12q")
    assert desk.model.block_sizes == [12, 10, 8, 6, 4]
    assert desk.training.epochs == 50
    assert desk.system.prefix_cache_mb == 256


def test_precedence_run_file_over_profile_and_arguments_over_run_file(tmp_path):
    run = _write(tmp_path / "run.yaml", {"task": "lcei", "seed": 3, "training": {"epochs": 7}})
    config = load_run_config(run)
    assert config.training.epochs == 7
    assert config.seed == 3
    override = load_run_config(run, seed=9, output_dir=str(tmp_path / "out"))
    assert override.seed == 9
    assert override.output_path == tmp_path / "out"


def test_unknown_key_names_its_path(tmp_path):
    run = _write(tmp_path / "run.yaml", {"training": {"epoch": 3}})
    with pytest.raises(ConfigurationError) as info:
        load_run_config(run)
    assert "training.epoch" in str(info.value)
    with pytest.raises(ConfigurationError):
        load_run_config(_write(tmp_path / "top.yaml", {"colour": "red"}))


def test_type_errors_are_reported(tmp_path):
    with pytest.raises(ConfigurationError) as info:
        load_run_config(_write(tmp_path / "run.yaml", {"model": {"num_qubits": "twelve"}}))
    assert "model.num_qubits" in str(info.value)
    with pytest.raises(ConfigurationError):
        load_run_config(_write(tmp_path / "bool.yaml", {"system": {"use_numba": "yes"}}))


def test_integers_are_accepted_for_float_fields(tmp_path):
    config = load_run_config(_write(tmp_path / "run.yaml", {"training": {"learning_rate": 1}}))
    assert isinstance(config.training.learning_rate, float)


def test_validation_collects_all_errors():
    config = RunConfig()
    config.model.block_sizes = [4, 8]
    config.model.num_qubits = 6
    config.readout.fidelity1 = 0.3
    config.noise.coherence_model = "other"
    errors = ConfigValidator.validate(config)
    assert any("block_sizes" in e for e in errors)
    assert any("fidelity1" in e for e in errors)
    assert any("coherence_model" in e for e in errors)
    with pytest.raises(ConfigurationError):
        ConfigValidator.raise_for(config)


def test_sensitivity_eps_hat_must_lie_on_the_attack_grid(tmp_path):
    config = RunConfig()
    config.attack.eps_max = 0.05
    assert any("sensitivity_eps_hat" in e for e in ConfigValidator.validate(config))
    with pytest.raises(ConfigurationError):
        load_run_config(_write(tmp_path / "run.yaml", {"attack": {"eps_max": 0.05}}))


def test_unknown_profile_is_rejected():
    with pytest.raises(ConfigurationError):
        load_run_config(profile="laptop")


def test_missing_section_files_are_written(tmp_path):
    manager = ConfigurationManager(tmp_path)
    assert (tmp_path / "training.yaml").exists()
    assert manager.resolve(task="lcei").training.batch_size == 100
    reread = yaml.safe_load((tmp_path / "attack.yaml").read_text(encoding="utf-8"))
    assert reread["adversarial_per_class"] == 100


def test_eps_grid():
    grid = AttackConfig(eps_max=1.0, eps_points=5).eps_grid()
    assert grid == [0.0, 0.25, 0.5, 0.75, 1.0]


def test_run_config_dict_round_trip():
    config = load_run_config(task="emnist")
    assert RunConfig.from_dict(config.to_dict()).to_dict() == config.to_dict()


def test_default_config_dir_ships_profiles():
    assert (DEFAULT_CONFIG_DIR / "profiles.yaml").exists()
