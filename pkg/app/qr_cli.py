"""
QRobust Command Line Interface
Stage pipeline prepare → train → attack → train-adv → report over one run
directory, with a manifest per stage and manifest replay.
"""

import argparse
import json
import platform
import shutil
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from qr_attack import (
    Classifier,
    Mask,
    QnnClassifier,
    attack_sweep,
    build_mask,
    class_mean_gradients,
    g_curve,
    generate_adversarial_set,
    gradient_samples,
    lcei_mask_default,
    mask_fgsm,
)
from qr_circuits import build_model
from qr_config import DEFAULT_CONFIG_DIR, PROFILES, TASKS, ConfigurationManager, RunConfig
from qr_datasets import Dataset, datasets_for, load_dataset, save_dataset
from qr_errors import (
    FileOperationError,
    QRobustError,
    TrainingError,
    error_handler,
    handle_errors,
)
from qr_files import array_digest, ensure_directory, file_digest, read_json, write_json
from qr_fnn import FnnClassifier, fnn_robustness_compare, fnn_train, load_fnn, save_fnn
from qr_logging import configure_logging, get_logger, log_context, log_result, shutdown_logging
from qr_mitigation import AssignmentMatrix, estimate_output_probability
from qr_performance import performance_monitor, system_snapshot
from qr_reporting import (
    comparison_table,
    plot_attack,
    plot_bounds,
    plot_g_curve,
    plot_gradient_maps,
    plot_history,
    read_table,
    write_table,
)
from qr_robustness import (
    NoiseParams,
    bound_records,
    compare_critical,
    critical_samples,
    mask_fraction_sweep,
    noise_delta_p,
    records_frame,
    records_from_frame,
    sensitivity_records,
    summarize_robustness,
    verify_lb_soundness,
)
from qr_simulator import set_numba_enabled
from qr_training import (
    GradientOptions,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_adversarial,
    train_clean,
)
from qr_utils import PerformanceTimer, SeedStreams, relative_change

logger = get_logger(__name__)

STAGES = ("prepare", "train", "attack", "train-adv", "report")
HADAMARD_BASIS = (1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0))
VERSIONED_PACKAGES = ("numpy", "scipy", "pandas", "matplotlib", "PyYAML", "psutil", "numba")


class RunLayout:
    """File locations inside one run directory."""

    def __init__(self, root: Path):
        self.root = Path(root)

    @property
    def train_cache(self) -> Path:
        return self.root / "data" / "train.npz"

    @property
    def test_cache(self) -> Path:
        return self.root / "data" / "test.npz"

    def checkpoint(self, mode: str) -> Path:
        return self.root / "checkpoints" / f"{mode}.json"

    @property
    def adv_set(self) -> Path:
        return self.root / "adversarial" / "adv_set.npz"

    @property
    def mask_file(self) -> Path:
        return self.root / "adversarial" / "mask.json"

    def result(self, name: str) -> Path:
        return self.root / "results" / name

    def plot(self, name: str) -> Path:
        return self.root / "plots" / name

    def manifest(self, stage: str) -> Path:
        return self.root / "manifests" / f"{stage}.json"

    def relative(self, path: Path) -> str:
        return Path(path).relative_to(self.root).as_posix()


@dataclass
class StageOutcome:
    """Files a stage read and wrote, plus its headline numbers."""

    inputs: List[Path] = field(default_factory=list)
    outputs: List[Path] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    parameters: Dict[str, str] = field(default_factory=dict)

    def wrote(self, path: Path) -> Path:
        self.outputs.append(Path(path))
        return path


def _require(paths: Sequence[Path], producer: Dict[Path, str], layout: RunLayout) -> None:
    missing = [p for p in paths if not Path(p).exists()]
    if missing:
        listing = ", ".join(f"{layout.relative(p)} (from '{producer.get(p, '?')}')" for p in missing)
        raise FileOperationError(
            f"Missing required inputs in {layout.root}: {listing}",
            file_path=str(missing[0]),
            operation="read",
        )


def _producers(layout: RunLayout) -> Dict[Path, str]:
    return {
        layout.train_cache: "prepare",
        layout.test_cache: "prepare",
        layout.checkpoint("clean"): "train",
        layout.mask_file: "attack",
        layout.adv_set: "attack",
        layout.checkpoint("adversarial"): "train-adv",
    }


def _load_splits(layout: RunLayout, outcome: StageOutcome) -> Tuple[Dataset, Dataset]:
    _require([layout.train_cache, layout.test_cache], _producers(layout), layout)
    outcome.inputs.extend([layout.train_cache, layout.test_cache])
    return load_dataset(layout.train_cache), load_dataset(layout.test_cache)


def _is_quantum(run: RunConfig) -> bool:
    return run.task != "fnn"


def _gradient_window(run: RunConfig) -> Optional[int]:
    if run.task == "emnist":
        return run.data.window
    if run.task == "fnn":
        return run.data.resolution
    return None


def _classifier(run: RunConfig, layout: RunLayout, mode: str, feature_range: Tuple[float, float]) -> Classifier:
    path = layout.checkpoint(mode)
    if run.task == "fnn":
        model, _ = load_fnn(path)
        return FnnClassifier(model, feature_range)
    checkpoint = load_checkpoint(path)
    options = GradientOptions(cache_limit_mb=run.system.prefix_cache_mb)
    return QnnClassifier(checkpoint.model, checkpoint.best_theta, feature_range, options, seed=run.seed)


def _attack_samples(run: RunConfig, train_set: Dataset, test_set: Dataset) -> Dataset:
    source = train_set if run.attack.attack_split == "train" else test_set
    return source.take(run.attack.attack_samples)


# Stages


def stage_prepare(run: RunConfig, layout: RunLayout, options: Dict[str, Any]) -> StageOutcome:
    outcome = StageOutcome()
    train_set, test_set = datasets_for(run)
    outcome.wrote(save_dataset(layout.train_cache, train_set))
    outcome.wrote(save_dataset(layout.test_cache, test_set))
    for dataset in (train_set, test_set):
        features = dataset.features_matrix()
        outcome.summary[dataset.split] = {
            "size": len(dataset),
            "class_counts": dataset.class_counts(),
            "feature_min": float(features.min()),
            "feature_max": float(features.max()),
            "digest": dataset.digest(),
        }
    outcome.summary["feature_range"] = list(train_set.feature_range)
    outcome.summary["num_features"] = train_set.num_features
    return outcome


def _train_stage(run: RunConfig, layout: RunLayout, options: Dict[str, Any], mode: str) -> StageOutcome:
    outcome = StageOutcome()
    train_set, test_set = _load_splits(layout, outcome)
    adv_set = None
    if mode == "adversarial":
        _require([layout.adv_set], _producers(layout), layout)
        outcome.inputs.append(layout.adv_set)
        adv_set = load_dataset(layout.adv_set)

    config = TrainConfig.from_run_config(run)
    path = layout.checkpoint(mode)

    if run.task == "fnn":
        model, history = fnn_train((train_set, test_set), config, run.model.fnn_hidden, adv_set)
        outcome.wrote(save_fnn(path, model, history, metadata={"mode": mode, "seed": run.seed}))
        outcome.parameters["weights"] = array_digest(model.flatten())
    else:
        model = build_model(run.task, run.model.num_qubits, run.model.block_sizes, train_set.num_features)
        resume = None
        if options.get("resume") and path.exists():
            resume = load_checkpoint(path)
            if resume.mode != mode:
                raise TrainingError(f"checkpoint {path} holds a {resume.mode} run, not {mode}")
            logger.info(f"Resuming {mode} training at epoch {resume.next_epoch}")

        def _save(checkpoint) -> None:
            save_checkpoint(path, checkpoint)

        if mode == "adversarial":
            best_theta, history = train_adversarial(
                model, (train_set, test_set), adv_set, config, resume=resume, on_epoch=_save
            )
        else:
            best_theta, history = train_clean(model, (train_set, test_set), config, resume=resume, on_epoch=_save)
        if not path.exists():
            raise TrainingError("training finished without writing a checkpoint", context={"epochs": config.epochs})
        outcome.outputs.append(path)
        outcome.parameters["best_theta"] = array_digest(best_theta)

    # wall-clock durations stay out of result tables
    frame = history.to_frame().drop(columns=["duration_s"])
    outcome.wrote(write_table(layout.result(f"history_{mode}.csv"), frame))
    if run.system.export_plots:
        outcome.wrote(plot_history(frame, layout.plot(f"history_{mode}.png"), title=f"{run.task} {mode}"))

    best = history.best()
    outcome.summary = {
        "mode": mode,
        "epochs": len(history),
        "best_epoch": history.best_epoch,
        "test_accuracy": best.test_accuracy if best else None,
        "test_loss": best.test_loss if best else None,
        "train_accuracy": best.train_accuracy if best else None,
    }
    if adv_set is not None:
        outcome.summary["adversarial_samples"] = len(adv_set)
        outcome.summary["adversarial_mix"] = config.adversarial_mix
    return outcome


def stage_train(run: RunConfig, layout: RunLayout, options: Dict[str, Any]) -> StageOutcome:
    return _train_stage(run, layout, options, "clean")


def stage_train_adv(run: RunConfig, layout: RunLayout, options: Dict[str, Any]) -> StageOutcome:
    return _train_stage(run, layout, options, "adversarial")


def stage_attack(run: RunConfig, layout: RunLayout, options: Dict[str, Any]) -> StageOutcome:
    outcome = StageOutcome()
    train_set, test_set = _load_splits(layout, outcome)
    _require([layout.checkpoint("clean")], _producers(layout), layout)
    outcome.inputs.append(layout.checkpoint("clean"))
    a = run.attack
    classifier = _classifier(run, layout, "clean", train_set.feature_range)

    probe = train_set.take(a.gradient_samples)
    gradients = gradient_samples(classifier, list(probe), run.system.workers)
    if run.task == "lcei" and a.lcei_mask == "central":
        mask, curve = lcei_mask_default(train_set.num_features), g_curve(gradients)
    else:
        mask, curve = build_mask(gradients, a.mask_fraction)
    outcome.wrote(write_json(layout.mask_file, mask.to_dict()))
    outcome.wrote(write_table(layout.result("gr_curve.csv"), curve.to_frame()))

    sweep = attack_sweep(
        classifier,
        list(_attack_samples(run, train_set, test_set)),
        mask,
        a.eps_grid(),
        with_infidelity=_is_quantum(run),
        workers=run.system.workers,
        full_gradient=True,
    )
    accuracy = sweep.accuracy_frame()
    samples = sweep.sample_frame()
    outcome.wrote(write_table(layout.result("attack_curve_clean.csv"), accuracy))
    outcome.wrote(write_table(layout.result("attack_samples_clean.csv"), samples))

    fractions = mask_fraction_sweep(classifier, list(probe), gradients, gradients, a.mask_fraction_sweep, a.sensitivity_eps_hat)
    outcome.wrote(write_table(layout.result("mask_sweep.csv"), fractions))

    maps = class_mean_gradients(gradients, probe.labels(), _gradient_window(run))
    rows = [
        {"label": label, "index": i, "value": float(v)}
        for label, grid in sorted(maps.items())
        for i, v in enumerate(np.ravel(grid))
    ]
    outcome.wrote(write_table(layout.result("gradient_means.csv"), pd.DataFrame(rows)))

    counts = train_set.class_counts()
    per_class = min([a.adversarial_per_class] + [counts.get(label, 0) for label in (0, 1)])
    if per_class < a.adversarial_per_class:
        logger.warning(f"Adversarial set reduced to {per_class} samples per class by the training split")
    adv_set = generate_adversarial_set(classifier, train_set, mask, a.adversarial_eps_hat, per_class)
    outcome.wrote(save_dataset(layout.adv_set, adv_set))

    if run.system.export_plots:
        outcome.wrote(plot_g_curve(curve.to_frame(), layout.plot("gr_curve.png"), marks=(a.mask_fraction, 0.25)))
        outcome.wrote(plot_attack(accuracy, samples, layout.plot("attack_clean.png")))
        if _gradient_window(run):
            names = dict(enumerate(run.data.letters))
            outcome.wrote(plot_gradient_maps(maps, layout.plot("gradient_maps.png"), names))

    outcome.summary = {
        "mask_fraction": mask.fraction,
        "mask_popcount": mask.popcount,
        "mask_dim": mask.dim,
        "g_ratio": curve.at(mask.fraction),
        "attack_samples": len(sweep.curves),
        "clean_accuracy": float(accuracy["accuracy"].iloc[0]),
        "final_accuracy": float(accuracy["accuracy"].iloc[-1]),
        "min_accuracy": float(accuracy["accuracy"].min()),
        "adversarial_samples": len(adv_set),
        "adversarial_eps_hat": a.adversarial_eps_hat,
    }
    return outcome


def _noise_rows(classifier: Classifier, sweep, samples: Sequence, noise: NoiseParams, eps_hat: float) -> List[Dict[str, Any]]:
    lo, hi = classifier.feature_range
    rows = []
    for curve, sample in zip(sweep.curves, samples):
        adversarial = mask_fgsm(sample, sweep.mask, eps_hat * (hi - lo), curve.gradient)
        rho = classifier.output_state(sample.features)
        sigma = classifier.output_state(adversarial.features)
        row = {"sample_id": sample.sample_id}
        for name, basis in (("z", (1.0, 0.0)), ("x", HADAMARD_BASIS)):
            result = noise_delta_p(rho, sigma, noise, basis)
            row.update(
                {
                    f"{name}_delta_p": result.delta_p,
                    f"{name}_delta_p_noise": result.delta_p_noise,
                    f"{name}_population_term": result.population_term,
                    f"{name}_coherence_term": result.coherence_term,
                    f"{name}_ratio": result.ratio,
                }
            )
        rows.append(row)
    return rows


def _readout_rows(run: RunConfig, classifier: Classifier, samples: Sequence) -> List[Dict[str, Any]]:
    r = run.readout
    assignment = AssignmentMatrix.single(r.fidelity0, r.fidelity1)
    streams = SeedStreams(run.seed)
    rows = []
    for sample in samples:
        estimate = estimate_output_probability(
            classifier.predict_proba(sample.features),
            assignment,
            r.shots,
            streams.generator("shots", sample.sample_id),
            r.ibu_iterations,
            r.ibu_tolerance,
        )
        rows.append({"sample_id": sample.sample_id, "label": sample.label, **estimate.to_dict()})
    return rows


def _soundness_rows(run: RunConfig, classifier: Classifier, samples: Sequence) -> List[Dict[str, Any]]:
    streams = SeedStreams(run.seed)
    rows = []
    for sample in samples:
        p = classifier.predict_proba(sample.features)
        if (p > 0.5) != (sample.label == 1):
            continue
        report = verify_lb_soundness(
            classifier, sample, run.attack.soundness_trials, streams.generator("attack-oracle", sample.sample_id)
        )
        rows.append({k: v for k, v in asdict(report).items() if k != "metadata"})
        if len(rows) >= run.attack.soundness_samples:
            break
    return rows


def _comparison_records(run: RunConfig, other_root: Path, regimes: Sequence[str]):
    other = RunLayout(other_root)
    records = {}
    for regime in regimes:
        path = other.result(f"sensitivity_{regime}.csv")
        if path.exists():
            records[regime] = records_from_frame(read_table(path))
    if not records:
        raise FileOperationError(
            f"No sensitivity tables under {other.root / 'results'}; run 'report' there first",
            file_path=str(other.root),
            operation="read",
        )
    return records


def stage_report(run: RunConfig, layout: RunLayout, options: Dict[str, Any]) -> StageOutcome:
    outcome = StageOutcome()
    producers = _producers(layout)
    _require(
        [layout.train_cache, layout.test_cache, layout.checkpoint("clean"), layout.mask_file], producers, layout
    )
    train_set, test_set = _load_splits(layout, outcome)
    outcome.inputs.extend([layout.checkpoint("clean"), layout.mask_file])
    mask = Mask.from_dict(read_json(layout.mask_file))
    a = run.attack
    quantum = _is_quantum(run)
    noise = NoiseParams.from_config(run.noise)
    samples = list(_attack_samples(run, train_set, test_set))

    regimes = ["clean"]
    if layout.checkpoint("adversarial").exists():
        regimes.append("adversarial")
        outcome.inputs.append(layout.checkpoint("adversarial"))
    else:
        logger.warning("No adversarially trained checkpoint; reporting the clean model only")

    summaries, sensitivity, bounds, classifiers, sweeps = [], {}, {}, {}, {}
    for regime in regimes:
        classifier = _classifier(run, layout, regime, train_set.feature_range)
        with log_context(regime=regime):
            sweep = attack_sweep(
                classifier, samples, mask, a.eps_grid(), quantum, run.system.workers, full_gradient=True
            )
        classifiers[regime], sweeps[regime] = classifier, sweep
        sensitivity[regime] = sensitivity_records(sweep, a.sensitivity_eps_hat, a.linear_fit_max)
        outcome.wrote(write_table(layout.result(f"sensitivity_{regime}.csv"), records_frame(sensitivity[regime])))
        if regime != "clean":
            outcome.wrote(write_table(layout.result(f"attack_curve_{regime}.csv"), sweep.accuracy_frame()))
            outcome.wrote(write_table(layout.result(f"attack_samples_{regime}.csv"), sweep.sample_frame()))
        if quantum:
            bounds[regime] = bound_records(sweep)
            frame = pd.DataFrame([b.to_row() for b in bounds[regime]])
            outcome.wrote(write_table(layout.result(f"bounds_{regime}.csv"), frame))
            if run.system.export_plots:
                outcome.wrote(plot_bounds(frame, layout.plot(f"bounds_{regime}.png")))

        summary = summarize_robustness(sensitivity[regime], bounds.get(regime), noise if quantum else None)
        row = {"regime": regime, **{k: v for k, v in summary.to_dict().items() if k != "extras"}}
        row["test_accuracy"] = _accuracy(classifier, test_set)
        summaries.append(row)
        outcome.summary.setdefault("bound_status", {})[regime] = summary.extras.get("bound_status", {})
        log_result(f"{regime}: mean R_adv {summary.mean_score:.4f}", **row)

    robustness = pd.DataFrame(summaries)
    if len(regimes) == 2:
        before, after = robustness["mean_score"].tolist()
        robustness["relative_change"] = [0.0, relative_change(before, after)]
        outcome.summary["relative_change"] = relative_change(before, after)
    outcome.wrote(write_table(layout.result("robustness_summary.csv"), robustness))
    outcome.summary["mean_score"] = dict(zip(robustness["regime"], robustness["mean_score"]))

    if quantum and len(regimes) == 2 and not any(b.r_lb is not None for b in bounds["clean"]):
        logger.warning("Clean model misclassifies every attacked sample; skipping the critical-sample comparison")
    elif quantum and len(regimes) == 2:
        comparison = compare_critical(bounds["clean"], bounds["adversarial"], a.critical_fraction)
        if comparison.excluded:
            logger.info(
                f"Critical samples drawn from {comparison.considered} correctly classified clean samples; "
                f"{comparison.excluded} misclassified samples excluded"
            )
        after = {b.sample_id: b for b in bounds["adversarial"]}
        rows = [
            {"sample_id": b.sample_id, "r_lb_clean": b.r_lb, "r_lb_adversarial": after[b.sample_id].r_lb}
            for b in critical_samples(bounds["clean"], a.critical_fraction)
        ]
        outcome.wrote(write_table(layout.result("critical.csv"), pd.DataFrame(rows)))
        outcome.summary["critical"] = {
            "count": len(comparison.sample_ids),
            "considered": comparison.considered,
            "excluded": comparison.excluded,
            "clean_mean": comparison.clean_mean,
            "adversarial_mean": comparison.adversarial_mean,
            "improvement": comparison.improvement,
        }

    if quantum:
        clean = classifiers["clean"]
        noise_frame = pd.DataFrame(_noise_rows(clean, sweeps["clean"], samples, noise, a.sensitivity_eps_hat))
        outcome.wrote(write_table(layout.result("noise.csv"), noise_frame))
        readout = pd.DataFrame(_readout_rows(run, clean, samples))
        outcome.wrote(write_table(layout.result("readout.csv"), readout))
        soundness = pd.DataFrame(_soundness_rows(run, clean, samples))
        outcome.wrote(write_table(layout.result("soundness.csv"), soundness))
        outcome.summary["noise_population_factor"] = noise.population_factor
        outcome.summary["readout_mean_abs_error"] = float((readout["corrected"] - readout["exact"]).abs().mean())
        outcome.summary["soundness_violations"] = int(soundness["violations"].sum()) if len(soundness) else 0

    compare_dir = options.get("compare")
    if compare_dir:
        other = _comparison_records(run, Path(compare_dir), regimes)
        qnn, fnn = (sensitivity, other) if quantum else (other, sensitivity)
        table = fnn_robustness_compare(qnn, fnn, noise)
        outcome.wrote(write_table(layout.result("fnn_comparison.csv"), table))
        outcome.summary["fnn_ratio"] = dict(zip(table["regime"], table["ratio"]))

    baseline_dir = options.get("baseline")
    if baseline_dir:
        baseline = read_table(RunLayout(Path(baseline_dir)).result("robustness_summary.csv"))
        columns = [c for c in ("mean_score", "mean_sensitivity", "mean_r_lb", "mean_r_ub", "mean_gap") if c in robustness]
        table = comparison_table(robustness, baseline, "regime", columns)
        outcome.wrote(write_table(layout.result("robustness_vs_baseline.csv"), table))

    outcome.wrote(write_json(layout.result("report.json"), outcome.summary))
    return outcome


def _accuracy(classifier: Classifier, dataset: Dataset) -> float:
    hits = [(classifier.predict_proba(s.features) > 0.5) == (s.label == 1) for s in dataset]
    return float(np.mean(hits))


STAGE_FUNCTIONS: Dict[str, Callable[[RunConfig, RunLayout, Dict[str, Any]], StageOutcome]] = {
    "prepare": stage_prepare,
    "train": stage_train,
    "attack": stage_attack,
    "train-adv": stage_train_adv,
    "report": stage_report,
}


# Manifests


def package_versions() -> Dict[str, Optional[str]]:
    versions: Dict[str, Optional[str]] = {"python": platform.python_version()}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def content_digest(path: Path) -> str:
    """SHA-256 of a run file; dataset caches are digested by content."""
    path = Path(path)
    if path.suffix == ".npz":
        return load_dataset(path).digest()
    return file_digest(path)


def _digests(layout: RunLayout, paths: Sequence[Path]) -> Dict[str, str]:
    unique = sorted({Path(p) for p in paths if Path(p).exists()})
    return {layout.relative(p): content_digest(p) for p in unique}


def _reproducible(outputs: Dict[str, str]) -> List[str]:
    # checkpoints embed wall-clock epoch durations and are compared via parameter digests
    return [name for name in outputs if not name.startswith(("checkpoints/", "plots/"))]


def write_manifest(
    stage: str, run: RunConfig, layout: RunLayout, outcome: StageOutcome, options: Dict[str, Any], duration_s: float
) -> Path:
    outputs = _digests(layout, outcome.outputs)
    document = {
        "kind": "qrobust-manifest",
        "stage": stage,
        "created": datetime.now().isoformat(),
        "output_dir": str(layout.root.resolve()),
        "seed": run.seed,
        "config": run.to_dict(),
        "options": options,
        "versions": package_versions(),
        "inputs": _digests(layout, outcome.inputs),
        "outputs": outputs,
        "reproducible": _reproducible(outputs),
        "parameters": outcome.parameters,
        "summary": outcome.summary,
        "duration_s": duration_s,
        "counters": dict(performance_monitor.counters),
        "timings": performance_monitor.metric_summaries(),
        "system": asdict(system_snapshot()),
    }
    return write_json(layout.manifest(stage), document)


def _configure(run: RunConfig, layout: RunLayout, log_level: Optional[str] = None) -> None:
    log_file = Path(run.system.log_file)
    if not log_file.is_absolute():
        log_file = layout.root / log_file
    configure_logging(
        log_level=log_level or run.system.log_level,
        log_file=str(log_file),
        json_output=run.system.json_logs,
        colored_console=run.system.colored_console,
        force=True,
    )
    set_numba_enabled(run.system.use_numba)


@handle_errors()
def execute_stage(stage: str, run: RunConfig, options: Optional[Dict[str, Any]] = None) -> StageOutcome:
    """Run one pipeline stage and write its manifest."""
    options = options or {}
    layout = RunLayout(run.output_path)
    ensure_directory(layout.root)
    performance_monitor.reset()
    with log_context(stage=stage, task=run.task, seed=run.seed):
        with PerformanceTimer(f"stage {stage}", logger) as timer:
            outcome = STAGE_FUNCTIONS[stage](run, layout, options)
        write_manifest(stage, run, layout, outcome, options, timer.duration or 0.0)
    logger.info(f"Stage {stage} finished; manifest {layout.manifest(stage)}")
    return outcome


@dataclass
class ReplayResult:
    stage: str
    output_dir: Path
    matched: List[str]
    mismatched: List[str]
    missing: List[str]

    @property
    def identical(self) -> bool:
        return not self.mismatched and not self.missing


def replay_manifest(manifest_path: Path, output_dir: Optional[str] = None) -> ReplayResult:
    """
    Rerun the stage a manifest describes in a fresh directory, seeded with
    copies of its recorded inputs, and compare output digests.
    """
    manifest = read_json(manifest_path)
    if manifest.get("kind") != "qrobust-manifest":
        raise FileOperationError(f"{manifest_path} is not a run manifest", file_path=str(manifest_path))
    stage = manifest["stage"]
    source = RunLayout(Path(manifest["output_dir"]))
    run = RunConfig.from_dict(manifest["config"])
    run.output_dir = output_dir or str(source.root / "replay" / stage)
    target = RunLayout(run.output_path)
    if target.root.resolve() == source.root.resolve():
        raise FileOperationError("replay directory must differ from the recorded run", file_path=str(target.root))

    _configure(run, target)
    for name, digest in manifest["inputs"].items():
        src = source.root / name
        if content_digest(src) != digest:
            raise FileOperationError(f"input {name} changed since the manifest was written", file_path=str(src))
        ensure_directory((target.root / name).parent)
        shutil.copy2(src, target.root / name)

    execute_stage(stage, run, manifest.get("options", {}))
    replayed = read_json(target.manifest(stage))

    matched, mismatched, missing = [], [], []
    for name in manifest["reproducible"]:
        if name not in replayed["outputs"]:
            missing.append(name)
        elif replayed["outputs"][name] == manifest["outputs"][name]:
            matched.append(name)
        else:
            mismatched.append(name)
    for name, digest in manifest.get("parameters", {}).items():
        key = f"parameters:{name}"
        (matched if replayed["parameters"].get(name) == digest else mismatched).append(key)
    return ReplayResult(stage, target.root, matched, mismatched, missing)


# Command line


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrobust", description="QNN adversarial robustness benchmark")
    parser.add_argument("--config-dir", default=None, help="Directory of section YAML files and profiles")
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in STAGES:
        p = sub.add_parser(stage, help=f"Run the {stage} stage")
        p.add_argument("--config", help="Run file (YAML) with section overrides")
        p.add_argument("--task", choices=TASKS)
        p.add_argument("--profile", choices=PROFILES)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="Run output directory")
        p.add_argument("--log-level", help="Override system.log_level")
        p.add_argument("--output-format", choices=["json", "text"], default="text")
        if stage in ("train", "train-adv"):
            p.add_argument("--resume", action="store_true", help="Continue from the stage checkpoint if present")
        if stage == "report":
            p.add_argument("--baseline", help="Earlier run directory to compare robustness against")
            p.add_argument("--compare", help="Run directory of the other model family for the QNN/FNN ratio")

    p = sub.add_parser("replay", help="Rerun a stage from its manifest and compare outputs")
    p.add_argument("manifest", help="Path to manifests/<stage>.json")
    p.add_argument("--out", help="Replay output directory")
    p.add_argument("--output-format", choices=["json", "text"], default="text")
    return parser


def _stage_options(args: argparse.Namespace) -> Dict[str, Any]:
    options = {}
    for key in ("resume", "baseline", "compare"):
        value = getattr(args, key, None)
        if value:
            options[key] = str(Path(value).resolve()) if isinstance(value, str) else value
    return options


def _print_summary(title: str, summary: Dict[str, Any], output_format: str) -> None:
    if output_format == "json":
        print(json.dumps(summary, indent=2, default=str))
        return
    print(f"\n{title}")
    print("=" * len(title))
    for key, value in summary.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        print(f"{key}: {value}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            result = replay_manifest(Path(args.manifest), args.out)
            _print_summary(
                f"Replay of {result.stage}",
                {
                    "output_dir": str(result.output_dir),
                    "matched": len(result.matched),
                    "mismatched": result.mismatched,
                    "missing": result.missing,
                    "identical": result.identical,
                },
                args.output_format,
            )
            return 0 if result.identical else 1

        manager = ConfigurationManager(args.config_dir or DEFAULT_CONFIG_DIR)
        run = manager.resolve(args.config, task=args.task, profile=args.profile, seed=args.seed, output_dir=args.out)
        _configure(run, RunLayout(run.output_path), args.log_level)
        outcome = execute_stage(args.command, run, _stage_options(args))
        _print_summary(f"{args.command} ({run.task}, {run.profile}, seed {run.seed})", outcome.summary, args.output_format)
        return 0
    except QRobustError as e:
        print(f"error: {e.message}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    finally:
        summary = error_handler.get_error_summary()
        if summary["total_errors"]:
            logger.debug(f"Error summary: {summary}")
        shutdown_logging()


if __name__ == "__main__":
    sys.exit(main())
