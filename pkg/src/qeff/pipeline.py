"""The three-step efficiency extraction run end to end on simulated data.

1. Calibrate integration weights from averaged transients at one drive
   amplitude (after tuning the depletion steps, for active depletion).
2. Sweep the amplitude and fit Ramsey fringes with the readout pulse
   embedded, giving |rho01|(eps) and hence sigma_m.
3. Sweep the amplitude again and fit the integrated-shot histograms, giving
   SNR(eps) and hence the slope a.

eta_e = a^2 sigma_m^2 / 2 then comes from :func:`qeff.estimation.extract_eta`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import depletion_opt as dopt
from .cavity_dynamics import (EXCITED, GROUND, ReadoutParams, WeightFunctions, analytic_snr,
                              compute_trajectory, dephasing_exponent, eta_identity,
                              optimal_weights, signal_and_noise, square_weights)
from .errors import DegenerateWeightsError, InvalidInputError
from .estimation import (CoherencePoint, EtaExtraction, SnrPoint, compute_snr,
                         extract_eta, fit_double_gaussian, fit_gaussian_decay,
                         fit_linear_snr, fit_ramsey_fringe)
from .homodyne_sim import averaged_transients, sample_integrated_shots, simulate_ramsey
from .pulses import NOMINAL_PASSIVE_WAIT, PulseEnvelope

# sub-stream tags so that each experiment draws from its own generators
_TAG_CALIB = 11
_TAG_RAMSEY = 12
_TAG_SHOTS = 13
_TAG_TUNEUP = 14

N_PHI_W = 256


@dataclass(frozen=True)
class PipelineConfig:
    n_eps: int = 13
    gamma_max: float = 4.0
    eps_max: float | None = None
    shots: int = 2 ** 15
    ramsey_phases: int = 32
    ramsey_shots: int = 2 ** 10
    weights: str = "optimal"
    depletion: str = "active"
    passive_wait: float = NOMINAL_PASSIVE_WAIT
    tuneup: str = "nelder-mead"
    calibration: str = "noiseless"
    calib_shots: int = 2 ** 15
    prep_error: float = 0.0
    baseline: float = 1.0
    snr_error: str = "delta"
    cost: dopt.CostConfig = dopt.CostConfig()
    tuneup_mode: str = "noiseless"
    max_evals: int = 2000

    def __post_init__(self):
        choices = {"weights": ("optimal", "square"), "depletion": ("active", "passive"),
                   "tuneup": ("analytic", "nelder-mead"), "calibration": ("noiseless", "mc"),
                   "snr_error": ("delta", "bootstrap"), "tuneup_mode": ("noiseless", "mc")}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise InvalidInputError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.n_eps < 5:
            raise InvalidInputError("need at least 5 epsilon points")
        if self.gamma_max <= 0 or (self.eps_max is not None and self.eps_max <= 0):
            raise InvalidInputError("gamma_max and eps_max must be positive")
        if self.shots < 1000 or self.ramsey_phases < 8 or self.ramsey_shots < 1:
            raise InvalidInputError("shot counts too small")
        if self.passive_wait <= 0 or self.calib_shots < 1:
            raise InvalidInputError("passive_wait and calib_shots must be positive")


@dataclass
class Calibration:
    """Unit-amplitude envelope with depletion set, plus the fixed weights."""

    envelope: PulseEnvelope
    weights: WeightFunctions
    depletion: dopt.DepletionParams | None
    gamma_unit: float
    eps_calib: float
    tuneup_evals: int = 0
    noisy_weights: bool = False


@dataclass
class ExtractionResult:
    eta: EtaExtraction
    eps: np.ndarray
    coherence: list[CoherencePoint]
    snr: list[SnrPoint]
    calibration: Calibration
    reference: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        cal = self.calibration
        return {
            "eta": self.eta.as_dict(),
            "epsilon": [float(e) for e in self.eps],
            "coherence": [asdict(p) for p in self.coherence],
            "snr": [asdict(p) for p in self.snr],
            "calibration": {
                "eps_calib": cal.eps_calib,
                "gamma_m_unit": cal.gamma_unit,
                "weights_kind": cal.weights.kind,
                "phi_w": cal.weights.phi_w,
                "depletion": None if cal.depletion is None else asdict(cal.depletion),
                "tuneup_evals": cal.tuneup_evals,
            },
            "reference": self.reference,
            "error_model": "a and sigma_m treated as independent",
        }


def _words(seed) -> list[int]:
    return [int(seed)] if isinstance(seed, (int, np.integer)) else [int(s) for s in seed]


def prepare_envelope(params: ReadoutParams, envelope: PulseEnvelope, config: PipelineConfig,
                     seed=0) -> tuple[PulseEnvelope, dopt.DepletionParams | None, int]:
    """Set the depletion of a unit-amplitude envelope according to ``config``.

    Passive mode ignores any depletion segments of ``envelope`` and instead
    waits ``passive_wait`` after the drive segments.
    """
    if config.depletion == "passive":
        drive = [s for s in envelope.segments if s.role != "depletion"]
        env = PulseEnvelope(tuple(drive), envelope.sample_period, config.passive_wait)
        return env, None, 0
    if len(envelope.depletion_indices) != 2:
        raise InvalidInputError("active depletion needs an envelope with two depletion segments")
    if config.tuneup == "analytic":
        dp = dopt.analytic_depletion(params, envelope)
        return dopt.apply_depletion(envelope, dp), dp, 0
    res = dopt.optimize_depletion(params, envelope, config=config.cost, mode=config.tuneup_mode,
                                  seed=_words(seed) + [_TAG_TUNEUP], max_evals=config.max_evals)
    return dopt.apply_depletion(envelope, res.params), res.params, res.n_evals


def _best_phase(d_i: np.ndarray, d_q: np.ndarray, n_phases: int = N_PHI_W) -> float:
    # the noise of square weights does not depend on phi_w, so maximise |signal|
    phis = np.arange(n_phases) * (2 * np.pi / n_phases)
    s = np.abs(np.cos(phis) * np.sum(d_i) + np.sin(phis) * np.sum(d_q))
    return float(phis[int(np.argmax(s))])


def calibrate(params: ReadoutParams, envelope: PulseEnvelope,
              config: PipelineConfig = PipelineConfig(), seed=0) -> Calibration:
    """Step 1: depletion tune-up and weight extraction."""
    env, dp, n_evals = prepare_envelope(params, envelope, config, seed)
    traj_unit = compute_trajectory(params, env)
    gamma_unit = dephasing_exponent(traj_unit, params.chi)
    if not gamma_unit > 0:
        raise DegenerateWeightsError("pulse causes no measurement-induced dephasing")
    eps_max = config.eps_max or float(np.sqrt(config.gamma_max / gamma_unit))
    traj = compute_trajectory(params, env.scaled(eps_max))
    n_avg = None if config.calibration == "noiseless" else config.calib_shots
    words = _words(seed) + [_TAG_CALIB]
    i0, q0 = averaged_transients(traj, params, GROUND, n_avg, words)
    i1, q1 = averaged_transients(traj, params, EXCITED, n_avg, words)
    if config.weights == "optimal":
        if n_avg is None:
            weights = optimal_weights(traj, params)
        else:
            d = (i1 - i0) + 1j * (q1 - q0)
            peak = float(np.max(np.abs(d)))
            if peak == 0:
                raise DegenerateWeightsError("averaged transients coincide")
            weights = WeightFunctions((d.real / peak).copy(), (d.imag / peak).copy(), "optimal")
    else:
        weights = square_weights(_best_phase(i1 - i0, q1 - q0), traj)
    return Calibration(env, weights, dp, float(gamma_unit), eps_max, n_evals, n_avg is not None)


def epsilon_grid(cal: Calibration, config: PipelineConfig) -> np.ndarray:
    return np.linspace(0.0, cal.eps_calib, config.n_eps)


def run_extraction(params: ReadoutParams, envelope: PulseEnvelope,
                   config: PipelineConfig = PipelineConfig(), seed=0,
                   calibration: Calibration | None = None) -> ExtractionResult:
    """Steps 1 to 3 on simulated data; returns the fits and all intermediate points."""
    cal = calibration or calibrate(params, envelope, config, seed)
    eps = epsilon_grid(cal, config)
    words = _words(seed)
    coherence, snr = [], []
    for k, e in enumerate(eps):
        traj = compute_trajectory(params, cal.envelope.scaled(e))
        fringe = simulate_ramsey(params, cal.envelope.scaled(e), config.ramsey_phases,
                                 config.ramsey_shots, words + [_TAG_RAMSEY, k],
                                 config.baseline, traj=traj)
        coherence.append(fit_ramsey_fringe(fringe, e))
        if e == 0:
            continue
        shot_seed = words + [_TAG_SHOTS, k]
        x0 = sample_integrated_shots(traj, params, cal.weights, GROUND, config.shots, shot_seed,
                                     config.prep_error)
        x1 = sample_integrated_shots(traj, params, cal.weights, EXCITED, config.shots, shot_seed,
                                     config.prep_error)
        f0, f1 = fit_double_gaussian(x0), fit_double_gaussian(x1)
        snr.append(compute_snr(f0, f1, e, method=config.snr_error, shots0=x0, shots1=x1,
                               seed=shot_seed))
    decay = fit_gaussian_decay(coherence)
    line = fit_linear_snr(snr)
    eta = extract_eta(line.a, decay.sigma_m, line.a_err, decay.sigma_err, decay.b)
    return ExtractionResult(eta, eps, coherence, snr, cal, reference_values(params, cal))


def reference_values(params: ReadoutParams, cal: Calibration) -> dict:
    """Noiseless values the fits should reproduce."""
    traj = compute_trajectory(params, cal.envelope)
    if cal.noisy_weights:
        s, n = signal_and_noise(traj, params, cal.weights)
        a = s / n
    else:
        a = analytic_snr(traj, params, cal.weights)
    sigma = 1.0 / np.sqrt(2 * cal.gamma_unit)
    return {"eta_injected": params.eta, "a_analytic": float(a),
            "sigma_m_analytic": float(sigma), "eta_analytic": float(a * a * sigma * sigma / 2),
            "eta_identity": float(eta_identity(traj, params))}
