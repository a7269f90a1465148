"""
QRobust Robustness Module
Sensitivity scores, the fidelity lower bound, cos² fits for the upper bound,
critical samples, decoherence-scaled sensitivity and a lower-bound
soundness check.
"""

import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import optimize, special, stats

from qr_attack import AttackCurve, Classifier, Mask, SweepResult, build_mask, correct_probability, mask_fgsm
from qr_datasets import Sample
from qr_errors import FitError, NoCrossingError, RobustnessError, ValidationError
from qr_logging import get_logger
from qr_simulator import DensityMatrix1Q, infidelity

logger = get_logger(__name__)

PROBABILITY_SUM_TOLERANCE = 1e-9


def sensitivity(p_clean: float, p_adv: float, eps_hat: float) -> float:
    """S = (p_clean − p_adv)/ε̂ for correct-class probabilities."""
    if eps_hat <= 0:
        raise RobustnessError(f"sensitivity needs ε̂ > 0, got {eps_hat}")
    return (p_clean - p_adv) / eps_hat


def robustness_score(s: float) -> float:
    """1/(1+e^S), evaluated without overflow."""
    return float(special.expit(-s))


@dataclass
class AdvRobustness:
    mean: float
    scores: np.ndarray


def adv_robustness(sensitivities: Sequence[float]) -> AdvRobustness:
    """Dataset mean of the per-sample logistic robustness score."""
    s = np.asarray(sensitivities, dtype=np.float64)
    if s.size == 0:
        raise RobustnessError("robustness needs at least one sample")
    scores = special.expit(-s)
    return AdvRobustness(mean=float(scores.mean()), scores=scores)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """cos(a, b); zero when either vector vanishes."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def linear_fit_sensitivity(eps_hat: np.ndarray, probabilities: np.ndarray, fit_max: float = 0.3) -> float:
    """Negative slope of a least-squares line through p(ε̂) on [0, fit_max]."""
    eps_hat = np.asarray(eps_hat)
    window = eps_hat <= fit_max + 1e-12
    if window.sum() < 2:
        raise RobustnessError(f"linear fit needs two ε̂ points in [0, {fit_max}]")
    slope, _ = np.polyfit(eps_hat[window], np.asarray(probabilities)[window], 1)
    return float(-slope)


@dataclass
class SensitivityRecord:
    sample_id: int
    label: int
    eps_hat: float
    p_clean: float
    p_adv: float
    delta_p: float
    sensitivity: float
    slope_sensitivity: float
    cosine_sim: float


_FLOAT_FIELDS = ("eps_hat", "p_clean", "p_adv", "delta_p", "sensitivity", "slope_sensitivity", "cosine_sim")


def sensitivity_record(curve: AttackCurve, mask: Mask, eps_hat: float = 0.1, fit_max: float = 0.3) -> SensitivityRecord:
    """Point and linear-fit sensitivities of one attack curve."""
    grid = np.asarray(curve.eps_hat)
    if not grid[0] - 1e-12 <= eps_hat <= grid[-1] + 1e-12:
        raise RobustnessError(
            f"ε̂ = {eps_hat} lies outside the attack grid [{grid[0]}, {grid[-1]}]", sample_id=curve.sample_id
        )
    p_clean = float(curve.probabilities[0])
    p_adv = float(np.interp(eps_hat, curve.eps_hat, curve.probabilities))
    delta = np.sign(curve.gradient) * mask.bits
    return SensitivityRecord(
        sample_id=curve.sample_id,
        label=curve.label,
        eps_hat=eps_hat,
        p_clean=p_clean,
        p_adv=p_adv,
        delta_p=p_clean - p_adv,
        sensitivity=sensitivity(p_clean, p_adv, eps_hat),
        slope_sensitivity=linear_fit_sensitivity(curve.eps_hat, curve.probabilities, fit_max),
        cosine_sim=cosine_similarity(delta, curve.gradient),
    )


def sensitivity_records(sweep: SweepResult, eps_hat: float = 0.1, fit_max: float = 0.3) -> List[SensitivityRecord]:
    return [sensitivity_record(c, sweep.mask, eps_hat, fit_max) for c in sweep.curves]


def records_frame(records: Sequence[Any]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in records])


def records_from_frame(frame: pd.DataFrame) -> List[SensitivityRecord]:
    """Inverse of ``records_frame`` for sensitivity tables read back from CSV."""
    missing = {f.name for f in fields(SensitivityRecord)} - set(frame.columns)
    if missing:
        raise RobustnessError(f"sensitivity table lacks columns {sorted(missing)}")
    return [
        SensitivityRecord(
            sample_id=int(row.sample_id),
            label=int(row.label),
            **{name: float(getattr(row, name)) for name in _FLOAT_FIELDS},
        )
        for row in frame.itertuples(index=False)
    ]


@dataclass(frozen=True)
class Correlation:
    pearson_r: float
    p_value: float
    count: int


def correlation_analysis(records: Sequence[SensitivityRecord]) -> Correlation:
    """Pearson correlation between S and cos(δ, ∇ₓL)."""
    if len(records) < 3:
        raise RobustnessError(f"correlation needs at least 3 records, got {len(records)}")
    s = np.array([r.sensitivity for r in records])
    c = np.array([r.cosine_sim for r in records])
    if np.ptp(s) == 0.0 or np.ptp(c) == 0.0:
        raise RobustnessError("correlation undefined: zero variance in sensitivity or cosine similarity")
    result = stats.pearsonr(s, c)
    return Correlation(pearson_r=float(result[0]), p_value=float(result[1]), count=len(records))


# Fidelity lower bound


def r_lb(p1: float, p2: float) -> float:
    """½(√p1 − √p2)² for correct-class p1 and competing p2 = 1 − p1."""
    if not (0.0 <= p1 <= 1.0 and 0.0 <= p2 <= 1.0):
        raise ValidationError("probabilities must lie in [0, 1]", field_name="p", field_value=(p1, p2))
    if abs(p1 + p2 - 1.0) > PROBABILITY_SUM_TOLERANCE:
        raise ValidationError("binary probabilities must sum to 1", field_name="p", field_value=(p1, p2))
    if p1 < p2:
        raise RobustnessError("sample is misclassified (p1 < p2); the lower bound is undefined")
    return 0.5 * (math.sqrt(p1) - math.sqrt(p2)) ** 2


def v_star(p1: float, p2: float) -> float:
    """Optimal fidelity at the decision threshold, √(1 − ½(√p1 − √p2)²)."""
    return math.sqrt(1.0 - 0.5 * (math.sqrt(p1) - math.sqrt(p2)) ** 2)


# cos² fits


@dataclass(frozen=True)
class CosSqFit:
    """y(x) = A·cos²(ωx + φ) + B with A ≥ 0, ω > 0, φ ∈ [0, π)."""

    amplitude: float
    omega: float
    phase: float
    offset: float
    rmse: float

    def __call__(self, x):
        return self.amplitude * np.cos(self.omega * np.asarray(x) + self.phase) ** 2 + self.offset

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _model(params: np.ndarray, x: np.ndarray) -> np.ndarray:
    a, w, phi, b = params
    return a * np.cos(w * x + phi) ** 2 + b


def _jacobian(params: np.ndarray, x: np.ndarray) -> np.ndarray:
    a, w, phi, _ = params
    u = w * x + phi
    s2 = np.sin(2.0 * u)
    return np.column_stack([np.cos(u) ** 2, -a * s2 * x, -a * s2, np.ones_like(x)])


def _canonical(a: float, w: float, phi: float, b: float) -> Tuple[float, float, float, float]:
    if a < 0:
        a, phi, b = -a, phi + math.pi / 2.0, b + a
    if w < 0:
        w, phi = -w, -phi
    return a, w, phi % math.pi, b


def fit_cos2(xs: Sequence[float], ys: Sequence[float], starts: int = 8) -> CosSqFit:
    """
    Least-squares A·cos²(ωx+φ)+B fit.

    Starts come from an (ω, φ) grid with A and B solved linearly; the best
    ``starts`` are refined by Levenberg–Marquardt and the lowest-RMSE result
    is returned in canonical form.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.size < 5 or x.size != y.size:
        raise FitError(f"cos² fit needs at least 5 paired points, got {x.size}")
    if np.any(np.diff(x) <= 0):
        raise FitError("cos² fit needs increasing x")

    if np.ptp(y) < 1e-14:
        return CosSqFit(0.0, 1.0, 0.0, float(y.mean()), float(np.std(y)))

    span = x[-1] - x[0]
    omegas = np.geomspace(math.pi / (8.0 * span), 4.0 * math.pi / span, 16)
    phases = np.linspace(0.0, math.pi, 12, endpoint=False)
    candidates = []
    for w in omegas:
        for phi in phases:
            c = np.cos(w * x + phi) ** 2
            design = np.column_stack([c, np.ones_like(x)])
            (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
            residual = float(np.sum((design @ np.array([a, b]) - y) ** 2))
            candidates.append((residual, np.array([a, w, phi, b])))
    candidates.sort(key=lambda item: item[0])

    best: Optional[np.ndarray] = None
    best_cost = math.inf
    residuals: List[float] = []
    for _, start in candidates[:starts]:
        try:
            result = optimize.least_squares(
                lambda p: _model(p, x) - y,
                start,
                jac=lambda p: _jacobian(p, x),
                method="lm",
                xtol=1e-14,
                ftol=1e-14,
                gtol=1e-14,
                max_nfev=2000,
            )
        except (ValueError, np.linalg.LinAlgError):
            continue
        cost = float(np.sum(result.fun**2))
        residuals.append(cost)
        if np.all(np.isfinite(result.x)) and cost < best_cost:
            best, best_cost = result.x, cost

    if best is None:
        raise FitError("cos² fit did not converge from any start", residuals=residuals)
    a, w, phi, b = _canonical(*best)
    return CosSqFit(a, w, phi, b, math.sqrt(best_cost / x.size))


def extract_r_ub(p_fit: CosSqFit, d_fit: CosSqFit, eps_max: Optional[float] = None) -> Tuple[float, float]:
    """
    Smallest positive ε̂* with p_fit(ε̂*) = 0.5 and R_UB = d_fit(ε̂*).
    Raises NoCrossingError when the fit never reaches 0.5 (within ``eps_max``).
    """
    if p_fit.amplitude <= 0.0:
        raise NoCrossingError("fitted probability is constant; no decision crossing")
    c = (0.5 - p_fit.offset) / p_fit.amplitude
    if not 0.0 <= c <= 1.0:
        raise NoCrossingError(f"fitted probability never reaches 0.5 (cos² target {c:.4f})")
    a0 = math.acos(math.sqrt(c))
    roots = []
    for u0 in (a0, math.pi - a0):
        k = math.ceil((p_fit.phase - u0) / math.pi)
        eps = (u0 + k * math.pi - p_fit.phase) / p_fit.omega
        if eps <= 0.0:
            eps += math.pi / p_fit.omega
        roots.append(eps)
    eps_star = min(roots)
    if eps_max is not None and eps_star > eps_max:
        raise NoCrossingError(f"decision crossing at ε̂={eps_star:.4f} lies beyond the swept range {eps_max}")
    return eps_star, float(d_fit(eps_star))


@dataclass
class BoundRecord:
    sample_id: int
    p1: float
    p2: float
    r_lb: Optional[float]
    eps_star: Optional[float] = None
    r_ub: Optional[float] = None
    p_fit: Optional[Dict[str, float]] = None
    d_fit: Optional[Dict[str, float]] = None
    status: str = "ok"

    @property
    def gap(self) -> Optional[float]:
        if self.r_ub is None or self.r_lb is None:
            return None
        return self.r_ub - self.r_lb

    def to_row(self) -> Dict[str, Any]:
        row = {k: v for k, v in asdict(self).items() if k not in ("p_fit", "d_fit")}
        for prefix, fit in (("p", self.p_fit), ("d", self.d_fit)):
            for key in ("amplitude", "omega", "phase", "offset", "rmse"):
                row[f"{prefix}_{key}"] = fit[key] if fit else None
        row["gap"] = self.gap
        return row


def bound_record(curve: AttackCurve) -> BoundRecord:
    """R_LB from the clean prediction and R_UB from cos² fits of p(ε̂) and D(ε̂)."""
    p1 = float(curve.probabilities[0])
    p2 = 1.0 - p1
    if p1 <= 0.5:
        return BoundRecord(curve.sample_id, p1, p2, None, status="misclassified")
    record = BoundRecord(curve.sample_id, p1, p2, r_lb(p1, p2))
    if curve.infidelities is None:
        record.status = "no-infidelity"
        return record
    try:
        p_fit = fit_cos2(curve.eps_hat, curve.probabilities)
        d_fit = fit_cos2(curve.eps_hat, curve.infidelities)
        record.p_fit, record.d_fit = p_fit.to_dict(), d_fit.to_dict()
        record.eps_star, record.r_ub = extract_r_ub(p_fit, d_fit, float(curve.eps_hat[-1]))
    except NoCrossingError:
        record.status = "no-crossing"
        return record
    except FitError as e:
        logger.warning(f"Sample {curve.sample_id}: {e.message}")
        record.status = "fit-failed"
        return record
    if record.r_ub < record.r_lb - (d_fit.rmse + 1e-9):
        logger.warning(
            f"Sample {curve.sample_id}: R_UB {record.r_ub:.3e} below R_LB {record.r_lb:.3e} beyond fit error"
        )
        record.status = "fit-failed"
    return record


def bound_records(sweep: SweepResult) -> List[BoundRecord]:
    return [bound_record(c) for c in sweep.curves]


def critical_samples(records: Sequence[BoundRecord], fraction: float = 0.2) -> List[BoundRecord]:
    """Lowest-R_LB ``fraction`` of the records, ties by sample id."""
    valid = [r for r in records if r.r_lb is not None]
    if not valid:
        raise RobustnessError("no records with a lower bound")
    count = max(1, int(round(fraction * len(valid))))
    return sorted(valid, key=lambda r: (r.r_lb, r.sample_id))[:count]


@dataclass
class CriticalComparison:
    sample_ids: List[int]
    clean_mean: float
    adversarial_mean: float
    # clean records with a bound, and misclassified ones left out of the ranking
    considered: int = 0
    excluded: int = 0

    @property
    def improvement(self) -> float:
        return self.adversarial_mean / self.clean_mean if self.clean_mean > 0 else math.inf


def compare_critical(
    clean: Sequence[BoundRecord], adversarial: Sequence[BoundRecord], fraction: float = 0.2
) -> CriticalComparison:
    """Mean R_LB on the clean model's critical samples before and after adversarial training."""
    critical = critical_samples(clean, fraction)
    after = {r.sample_id: r for r in adversarial}
    missing = [r.sample_id for r in critical if r.sample_id not in after]
    if missing:
        raise RobustnessError("adversarial records lack critical samples", context={"missing": missing})
    # a sample the adversarial model misclassifies has no margin left
    after_values = [after[r.sample_id].r_lb or 0.0 for r in critical]
    return CriticalComparison(
        sample_ids=[r.sample_id for r in critical],
        clean_mean=float(np.mean([r.r_lb for r in critical])),
        adversarial_mean=float(np.mean(after_values)),
        considered=sum(r.r_lb is not None for r in clean),
        excluded=sum(r.r_lb is None for r in clean),
    )


# Decoherence


@dataclass(frozen=True)
class NoiseParams:
    """
    Composite amplitude/phase damping over an effective duration ``t``.
    ``coherence_model`` selects the off-diagonal factor: "channel" is the
    product of both channels' factors, exp(−t/(2T1))·exp(−t/(2T2));
    "combined-time" uses exp(−t/(2T1+2T2)).
    """

    t1: float
    t2: float
    t: float
    coherence_model: str = "channel"

    def __post_init__(self):
        if self.t1 <= 0 or self.t2 <= 0 or self.t < 0:
            raise RobustnessError(f"nonphysical noise parameters T1={self.t1}, T2={self.t2}, t={self.t}")
        if self.coherence_model not in ("channel", "combined-time"):
            raise ValidationError("unknown coherence model", field_name="coherence_model", field_value=self.coherence_model)
        if 2.0 * self.t1 < self.t2:
            warnings.warn(f"T2={self.t2} exceeds 2·T1={2 * self.t1}", RuntimeWarning)

    @classmethod
    def from_config(cls, config) -> "NoiseParams":
        return cls(t1=config.t1, t2=config.t2, t=config.duration, coherence_model=config.coherence_model)

    @property
    def population_factor(self) -> float:
        return math.exp(-self.t / self.t1)

    @property
    def coherence_factor(self) -> float:
        if self.coherence_model == "combined-time":
            return math.exp(-self.t / (2.0 * self.t1 + 2.0 * self.t2))
        return math.exp(-self.t / (2.0 * self.t1)) * math.exp(-self.t / (2.0 * self.t2))


def apply_damping(rho: DensityMatrix1Q, params: NoiseParams) -> DensityMatrix1Q:
    """Amplitude damping then phase damping, entrywise."""
    decay = params.population_factor
    coherence = params.coherence_factor
    rho11 = rho.rho11 * decay
    return DensityMatrix1Q(
        rho00=rho.rho00 + rho.rho11 - rho11,
        rho01=rho.rho01 * coherence,
        rho10=rho.rho10 * coherence,
        rho11=rho11,
    )


@dataclass(frozen=True)
class NoisyDeltaP:
    delta_p: float
    delta_p_noise: float
    population_term: float
    coherence_term: float

    @property
    def ratio(self) -> float:
        return self.delta_p_noise / self.delta_p if self.delta_p != 0 else math.nan


def noise_delta_p(
    rho: DensityMatrix1Q,
    sigma: DensityMatrix1Q,
    params: NoiseParams,
    basis: Tuple[complex, complex] = (1.0, 0.0),
) -> NoisyDeltaP:
    """
    Δp = ⟨b|ρ|b⟩ − ⟨b|σ|b⟩ for the measurement state |b⟩ = α|0⟩ + β|1⟩,
    before and after the damping channel applied to both states.

    Δp = A + B with A = Δρ00(|α|²−|β|²) and B = 2·Re(conj(α)·β·Δρ01);
    the channel scales A by the population factor and B by the coherence factor.
    """
    alpha, beta = complex(basis[0]), complex(basis[1])
    norm = math.sqrt(abs(alpha) ** 2 + abs(beta) ** 2)
    alpha, beta = alpha / norm, beta / norm
    rho.validate()
    sigma.validate()

    d00 = (rho.rho00 - sigma.rho00).real
    d01 = rho.rho01 - sigma.rho01
    a_term = d00 * (abs(alpha) ** 2 - abs(beta) ** 2)
    b_term = 2.0 * (alpha.conjugate() * beta * d01).real

    def _measure(state: DensityMatrix1Q) -> float:
        b = np.array([alpha, beta])
        return float(np.real(b.conj() @ state.matrix() @ b))

    noisy_rho = apply_damping(rho, params)
    noisy_sigma = apply_damping(sigma, params)
    return NoisyDeltaP(
        delta_p=a_term + b_term,
        delta_p_noise=_measure(noisy_rho) - _measure(noisy_sigma),
        population_term=a_term,
        coherence_term=b_term,
    )


def noisy_adv_robustness(sensitivities: Sequence[float], params: NoiseParams) -> AdvRobustness:
    """R̄_adv with computational-basis Δp scaled by exp(−t/T1)."""
    return adv_robustness(np.asarray(sensitivities, dtype=np.float64) * params.population_factor)


@dataclass
class RobustnessSummary:
    count: int
    mean_score: float
    mean_sensitivity: float
    mean_slope_sensitivity: float
    noisy_mean_score: Optional[float] = None
    pearson_r: Optional[float] = None
    mean_r_lb: Optional[float] = None
    mean_r_ub: Optional[float] = None
    mean_gap: Optional[float] = None
    extras: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def summarize_robustness(
    records: Sequence[SensitivityRecord],
    bounds: Optional[Sequence[BoundRecord]] = None,
    noise: Optional[NoiseParams] = None,
) -> RobustnessSummary:
    s = [r.sensitivity for r in records]
    summary = RobustnessSummary(
        count=len(records),
        mean_score=adv_robustness(s).mean,
        mean_sensitivity=float(np.mean(s)),
        mean_slope_sensitivity=float(np.mean([r.slope_sensitivity for r in records])),
    )
    if noise is not None:
        summary.noisy_mean_score = noisy_adv_robustness(s, noise).mean
    try:
        summary.pearson_r = correlation_analysis(records).pearson_r
    except RobustnessError as e:
        logger.warning(f"Correlation skipped: {e.message}")
    if bounds:
        lbs = [b.r_lb for b in bounds if b.r_lb is not None]
        ubs = [b.r_ub for b in bounds if b.status == "ok" and b.r_ub is not None]
        gaps = [b.gap for b in bounds if b.status == "ok" and b.gap is not None]
        summary.mean_r_lb = float(np.mean(lbs)) if lbs else None
        summary.mean_r_ub = float(np.mean(ubs)) if ubs else None
        summary.mean_gap = float(np.mean(gaps)) if gaps else None
        summary.extras["bound_status"] = pd.Series([b.status for b in bounds]).value_counts().to_dict()
    return summary


def mask_fraction_sweep(
    classifier: Classifier,
    samples: Sequence[Sample],
    gradients: np.ndarray,
    mask_gradients: np.ndarray,
    fractions: Sequence[float],
    eps_hat: float = 0.1,
) -> pd.DataFrame:
    """
    Mean sensitivity S(r) at ``eps_hat`` for masks of each fraction r, with
    G_r/G. ``gradients`` are full input gradients of ``samples``;
    ``mask_gradients`` build the masks.
    """
    lo, hi = classifier.feature_range
    clean = [correct_probability(classifier.predict_proba(s.features), s.label) for s in samples]
    rows = []
    for r in fractions:
        mask, curve = build_mask(mask_gradients, r)
        values = []
        for sample, gradient, p_clean in zip(samples, gradients, clean):
            adversarial = mask_fgsm(sample, mask, eps_hat * (hi - lo), gradient)
            p_adv = correct_probability(classifier.predict_proba(adversarial.features), sample.label)
            values.append(sensitivity(p_clean, p_adv, eps_hat))
        rows.append(
            {
                "r": r,
                "popcount": mask.popcount,
                "g_ratio": curve.at(r),
                "mean_sensitivity": float(np.mean(values)),
            }
        )
    return pd.DataFrame(rows)


# Soundness of the lower bound


@dataclass
class SoundnessReport:
    sample_id: int
    r_lb: float
    trials: int
    checked: int
    violations: int
    metadata: Dict[str, Any] = field(default_factory=dict)


def verify_lb_soundness(
    classifier: Classifier,
    sample: Sample,
    trials: int,
    rng: np.random.Generator,
    bisection_steps: int = 30,
) -> SoundnessReport:
    """
    Random input-space perturbations whose output infidelity stays below
    R_LB must not change the prediction.

    Along each random direction the magnitude is doubled until the
    infidelity reaches R_LB, then bisected to the largest magnitude still
    below it; that point and a uniformly drawn fraction of it are checked.
    """
    p_clean = correct_probability(classifier.predict_proba(sample.features), sample.label)
    if p_clean <= 0.5:
        raise RobustnessError("soundness check needs a correctly classified sample", sample_id=sample.sample_id)
    bound = r_lb(p_clean, 1.0 - p_clean)
    # stay clear of the boundary by a relative margin
    threshold = bound * (1.0 - 1e-6)
    clean_state = classifier.output_state(sample.features)
    if clean_state is None:
        raise RobustnessError("soundness check needs a classifier with a quantum output state")
    metadata = {"sampler": "input-space random directions", "bisection_steps": bisection_steps}
    report = SoundnessReport(sample.sample_id, bound, trials, 0, 0, metadata)
    if trials <= 0 or bound == 0.0:
        return report

    lo, hi = classifier.feature_range
    span = hi - lo

    def _distance(point: np.ndarray) -> float:
        return infidelity(clean_state, classifier.output_state(point))

    for _ in range(trials):
        direction = rng.normal(size=sample.features.size)
        direction /= np.linalg.norm(direction)
        inner, outer = 0.0, 0.01 * span
        while _distance(sample.features + outer * direction) < threshold and outer < 64.0 * span:
            inner, outer = outer, 2.0 * outer
        for _ in range(bisection_steps):
            mid = 0.5 * (inner + outer)
            if _distance(sample.features + mid * direction) < threshold:
                inner = mid
            else:
                outer = mid
        for magnitude in (inner, rng.uniform(0.0, inner)):
            point = sample.features + magnitude * direction
            if _distance(point) >= threshold:
                continue
            report.checked += 1
            if correct_probability(classifier.predict_proba(point), sample.label) <= 0.5:
                report.violations += 1
    if report.violations:
        logger.warning(f"Sample {sample.sample_id}: {report.violations} lower-bound violations in {report.checked} checks")
    return report
