"""Linear dispersive resonator dynamics and the quantities derived from it.

The intra-resonator field obeys

    d alpha / dt = -i eps f(t) - i (Delta +/- chi) alpha - kappa/2 alpha

with the upper sign for the qubit in |0> and the lower sign for |1>.  All
rates are angular (rad/s), times in seconds.  Drive amplitudes in a
:class:`~qeff.pulses.PulseEnvelope` are dimensionless; ``drive_scale``
converts them to rad/s.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .errors import DegenerateWeightsError, InvalidInputError, SingularSystemError
from .pulses import PulseEnvelope

TWO_PI = 2 * np.pi

# Resonator spectroscopy values of the measured device.
NOMINAL_KAPPA = TWO_PI * 1.4e6
NOMINAL_CHI = TWO_PI * -105e3 / 2

# rad/s of drive per unit envelope amplitude.  With this choice the 600 ns
# square ramp with active depletion at amplitude 0.25 gives Gamma_m ~ 2.9
# (coherence down to ~5%) and ~0.7 at 0.12, so amplitudes read like the
# instrument volts of the calibration experiment.
DEFAULT_DRIVE_SCALE = TWO_PI * 35e6

GROUND, EXCITED = 0, 1


@dataclass(frozen=True)
class ReadoutParams:
    kappa: float
    chi: float
    delta: float = 0.0
    eta: float = 1.0
    v0: float = 1.0
    drive_scale: float = DEFAULT_DRIVE_SCALE

    def __post_init__(self):
        vals = (self.kappa, self.chi, self.delta, self.eta, self.v0, self.drive_scale)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidInputError("readout parameters must be finite")
        if self.kappa <= 0:
            raise InvalidInputError("kappa must be positive")
        if not 0 < self.eta <= 1:
            raise InvalidInputError("eta must lie in (0, 1]")
        if self.v0 <= 0:
            raise InvalidInputError("v0 must be positive")
        if self.drive_scale <= 0:
            raise InvalidInputError("drive_scale must be positive")

    @classmethod
    def nominal(cls, **overrides) -> "ReadoutParams":
        """Device values (kappa/2pi = 1.4 MHz, 2chi/2pi = -105 kHz), Delta = 0."""
        base = dict(kappa=NOMINAL_KAPPA, chi=NOMINAL_CHI, delta=0.0, eta=0.165)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "ReadoutParams":
        return replace(self, **changes)

    def decay_rate(self, state: int) -> complex:
        """lambda in d alpha/dt = -i drive - lambda alpha."""
        pull = self.chi if state == GROUND else -self.chi
        return 1j * (self.delta + pull) + self.kappa / 2


@dataclass(frozen=True)
class FieldTrajectory:
    """Sampled fields for both qubit states.

    Trajectories built by :func:`compute_trajectory` also carry the drive per
    sample interval (rad/s) and both decay rates, which lets the field
    integrals be evaluated exactly instead of by the trapezoid rule.
    """

    times: np.ndarray
    alpha0: np.ndarray
    alpha1: np.ndarray
    drive: np.ndarray | None = field(default=None, repr=False)
    rates: tuple[complex, complex] | None = None

    def __post_init__(self):
        if not (len(self.times) == len(self.alpha0) == len(self.alpha1)):
            raise InvalidInputError("trajectory arrays must share the time grid")
        if len(self.times) < 2:
            raise InvalidInputError("trajectory needs at least two samples")
        if self.drive is not None and len(self.drive) != len(self.times) - 1:
            raise InvalidInputError("drive must have one entry per sample interval")

    @property
    def sample_period(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def difference(self) -> np.ndarray:
        return self.alpha1 - self.alpha0

    def field(self, state: int) -> np.ndarray:
        return self.alpha0 if state == GROUND else self.alpha1

    def to_csv(self, path: str | Path) -> None:
        """Write ``t_ns, re_a0, im_a0, re_a1, im_a1`` rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_ns", "re_a0", "im_a0", "re_a1", "im_a1"])
            for t, a0, a1 in zip(self.times, self.alpha0, self.alpha1):
                w.writerow([f"{t * 1e9:.6f}", repr(float(a0.real)), repr(float(a0.imag)),
                            repr(float(a1.real)), repr(float(a1.imag))])


@dataclass(frozen=True)
class WeightFunctions:
    w_i: np.ndarray
    w_q: np.ndarray
    kind: str = "optimal"
    phi_w: float | None = None

    def __post_init__(self):
        if len(self.w_i) != len(self.w_q):
            raise InvalidInputError("w_i and w_q must have equal length")
        if self.kind not in ("optimal", "square"):
            raise InvalidInputError(f"unknown weight kind {self.kind!r}")

    @property
    def complex(self) -> np.ndarray:
        return self.w_i + 1j * self.w_q


# ------------------------------------------------------------------ dynamics

def _check_finite_envelope(env: PulseEnvelope) -> np.ndarray:
    drive = env.drive()
    if not np.all(np.isfinite(drive)):
        raise InvalidInputError("envelope contains non-finite drive values")
    return drive


def _rk4_steps(alpha: complex, lam: complex, drive: np.ndarray, dt: float) -> np.ndarray:
    """Fixed-step RK4 with the drive held constant over each step."""
    out = np.empty(len(drive) + 1, dtype=complex)
    out[0] = alpha
    for k, u in enumerate(drive):
        f1 = -1j * u - lam * alpha
        a = alpha + 0.5 * dt * f1
        f2 = -1j * u - lam * a
        a = alpha + 0.5 * dt * f2
        f3 = -1j * u - lam * a
        a = alpha + dt * f3
        f4 = -1j * u - lam * a
        alpha = alpha + dt / 6 * (f1 + 2 * f2 + 2 * f3 + f4)
        out[k + 1] = alpha
    return out


def _exact_steps(alpha: complex, lam: complex, u: complex, n: int, dt: float) -> np.ndarray:
    """Exact propagation under constant drive ``u`` for ``n`` steps, endpoints included."""
    ss = -1j * u / lam
    return ss + (alpha - ss) * np.exp(-lam * dt * np.arange(n + 1))


def evolve_field(params: ReadoutParams, envelope: PulseEnvelope, state: int) -> np.ndarray:
    """Field alpha(t) on the envelope grid for one qubit state, starting from vacuum.

    Constant segments (and the buffer) are propagated exactly; user-sampled
    segments use RK4 at the sample period.
    """
    if state not in (GROUND, EXCITED):
        raise InvalidInputError(f"state must be 0 or 1, got {state!r}")
    _check_finite_envelope(envelope)
    dt = envelope.sample_period
    lam = params.decay_rate(state)
    pieces = [np.zeros(1, dtype=complex)]
    alpha = 0j
    for seg in envelope.segments:
        n = seg.n_steps(dt)
        u = params.drive_scale * seg.complex_amplitude
        if seg.is_constant:
            block = _exact_steps(alpha, lam, u, n, dt)
        else:
            block = _rk4_steps(alpha, lam, u * seg.samples, dt)
        pieces.append(block[1:])
        alpha = block[-1]
    if envelope.buffer_steps:
        pieces.append(_exact_steps(alpha, lam, 0j, envelope.buffer_steps, dt)[1:])
    return np.concatenate(pieces)


def evolve_field_rk4(params: ReadoutParams, envelope: PulseEnvelope, state: int,
                     substeps: int = 1) -> np.ndarray:
    """Reference integrator: RK4 over the whole envelope, ``substeps`` per sample."""
    drive = params.drive_scale * _check_finite_envelope(envelope)
    dt = envelope.sample_period / substeps
    fine = _rk4_steps(0j, params.decay_rate(state), np.repeat(drive, substeps), dt)
    return fine[::substeps]


def compute_trajectory(params: ReadoutParams, envelope: PulseEnvelope) -> FieldTrajectory:
    return FieldTrajectory(envelope.times, evolve_field(params, envelope, GROUND),
                           evolve_field(params, envelope, EXCITED),
                           drive=params.drive_scale * envelope.drive(),
                           rates=(params.decay_rate(GROUND), params.decay_rate(EXCITED)))


# ------------------------------------------------------- derived quantities

def _integrate(y: np.ndarray, times: np.ndarray) -> float:
    return float(trapezoid(y, times))


def _field_terms(traj: FieldTrajectory, state: int):
    """Per-interval decomposition alpha(t_k + tau) = ss + c exp(-lam tau)."""
    lam = traj.rates[state]
    ss = -1j * traj.drive / lam
    c = traj.field(state)[:-1] - ss
    return [(ss, 0j), (c, lam)]


def _exp_integral(mu, h):
    # int_0^h exp(-mu tau) dtau, with the mu -> 0 limit
    mu = np.asarray(mu, dtype=complex)
    small = np.abs(mu * h) < 1e-8
    safe = np.where(small, 1.0, mu)
    return np.where(small, h * (1 - mu * h / 2), -np.expm1(-safe * h) / safe)


def _bilinear(traj: FieldTrajectory, x_terms, y_terms) -> complex:
    """Exact int x(t) conj(y(t)) dt for fields given as per-interval exponential sums."""
    h = np.diff(traj.times)
    total = 0j
    for cx, mx in x_terms:
        for cy, my in y_terms:
            total += np.sum(cx * np.conj(cy) * _exp_integral(mx + np.conj(my), h))
    return complex(total)


def _exact(traj: FieldTrajectory) -> bool:
    return traj.drive is not None and traj.rates is not None


def field_overlap(traj: FieldTrajectory) -> complex:
    """int alpha1 conj(alpha0) dt."""
    if _exact(traj):
        return _bilinear(traj, _field_terms(traj, EXCITED), _field_terms(traj, GROUND))
    return complex(trapezoid(traj.alpha1 * np.conj(traj.alpha0), traj.times))


def dephasing_exponent(traj: FieldTrajectory, chi: float) -> float:
    """Measurement-induced dephasing exponent Gamma_m = 2 chi int Im(alpha1 alpha0*) dt.

    The conjugate sits on alpha0 so that Gamma_m >= 0 with the sign rule of
    the equation of motion used here (ground state pulled by +chi).
    """
    if not np.isfinite(chi):
        raise InvalidInputError("chi must be finite")
    return 2 * chi * field_overlap(traj).imag


def deterministic_phase(traj: FieldTrajectory, chi: float) -> float:
    """AC-Stark-like phase 2 chi int Re(alpha0 alpha1*) dt picked up during the pulse."""
    return 2 * chi * field_overlap(traj).real


def separation_integral(traj: FieldTrajectory) -> float:
    """int |alpha1 - alpha0|^2 dt."""
    if _exact(traj):
        t0, t1 = _field_terms(traj, GROUND), _field_terms(traj, EXCITED)
        diff = [(t1[0][0] - t0[0][0], 0j), (t1[1][0], t1[1][1]), (-t0[1][0], t0[1][1])]
        return _bilinear(traj, diff, diff).real
    return _integrate(np.abs(traj.difference) ** 2, traj.times)


def optimal_weights(traj: FieldTrajectory, params: ReadoutParams | None = None) -> WeightFunctions:
    """Matched-filter weights proportional to the mean signal difference <V1 - V0>.

    Normalised to unit peak magnitude; the SNR does not depend on the scale.
    """
    diff = traj.difference
    peak = float(np.max(np.abs(diff)))
    scale = float(np.max(np.abs(np.concatenate([traj.alpha0, traj.alpha1]))))
    if peak == 0.0 or peak <= 1e-13 * scale:
        raise DegenerateWeightsError("mean signals for |0> and |1> coincide; no information")
    w = diff / peak
    return WeightFunctions(w.real.copy(), w.imag.copy(), "optimal")


def square_weights(phi_w: float, n_samples: int | FieldTrajectory) -> WeightFunctions:
    """Constant weights (cos phi_w, sin phi_w) over the whole grid."""
    n = len(n_samples.times) if isinstance(n_samples, FieldTrajectory) else int(n_samples)
    return WeightFunctions(np.full(n, np.cos(phi_w)), np.full(n, np.sin(phi_w)),
                           "square", float(phi_w))


def signal_and_noise(traj: FieldTrajectory, params: ReadoutParams,
                     weights: WeightFunctions) -> tuple[float, float]:
    """Analytic S and N of the integrated signal for arbitrary weights."""
    if len(weights.w_i) != len(traj.times):
        raise InvalidInputError("weights and trajectory use different grids")
    norm = _integrate(weights.w_i ** 2 + weights.w_q ** 2, traj.times)
    if norm <= 0:
        raise InvalidInputError("weights have zero norm")
    gain = params.v0 * np.sqrt(2 * params.kappa * params.eta)
    d = traj.difference
    s = gain * abs(_integrate(weights.w_i * d.real + weights.w_q * d.imag, traj.times))
    return s, params.v0 * np.sqrt(norm)


def analytic_snr(traj: FieldTrajectory, params: ReadoutParams,
                 weights: WeightFunctions | None = None) -> float:
    """SNR of the integrated shot.

    Optimal weights (or ``weights=None``) use the closed form
    sqrt(2 kappa eta int |alpha1 - alpha0|^2 dt); other weights use S/N.
    """
    if weights is None or weights.kind == "optimal":
        if weights is not None:
            if len(weights.w_i) != len(traj.times):
                raise InvalidInputError("weights and trajectory use different grids")
            if not np.any(weights.w_i) and not np.any(weights.w_q):
                raise InvalidInputError("weights have zero norm")
        return float(np.sqrt(2 * params.kappa * params.eta * separation_integral(traj)))
    s, n = signal_and_noise(traj, params, weights)
    return s / n


def optimize_phi_w(traj: FieldTrajectory, params: ReadoutParams,
                   n_phases: int = 256) -> tuple[float, float]:
    """Scan the square-weight demodulation phase; return (phi_w, best SNR)."""
    phis = np.arange(n_phases) * (2 * np.pi / n_phases)
    snrs = [analytic_snr(traj, params, square_weights(p, traj)) for p in phis]
    k = int(np.argmax(snrs))
    return float(phis[k]), float(snrs[k])


def eta_identity(traj: FieldTrajectory, params: ReadoutParams) -> float:
    """SNR_opt^2 / (4 Gamma_m); equals eta when the field vanishes at both window edges."""
    gm = dephasing_exponent(traj, params.chi)
    if gm == 0:
        raise InvalidInputError("Gamma_m is zero")
    return analytic_snr(traj, params) ** 2 / (4 * gm)


# ----------------------------------------------------------------- depletion

def _final_field(params: ReadoutParams, envelope: PulseEnvelope, state: int,
                 stop: int) -> complex:
    return evolve_field(params, envelope, state)[stop]


def solve_depletion(params: ReadoutParams, envelope: PulseEnvelope,
                    depletion: tuple[int, int] | None = None) -> tuple[complex, complex]:
    """Complex amplitudes of two depletion segments nulling both fields at their end.

    Each segment contributes linearly to the final field, so the amplitudes
    follow from a 2x2 complex linear system built from unit-amplitude
    responses.  ``depletion`` defaults to the segments marked ``depletion``.
    """
    idx = list(depletion) if depletion is not None else envelope.depletion_indices
    if len(idx) != 2:
        raise InvalidInputError(f"need exactly two depletion segments, got {len(idx)}")
    stop = envelope.segment_start(max(idx) + 1)
    base_env = envelope
    for i in idx:
        base_env = base_env.with_segment(i, amplitude=0.0, phase=0.0)
    rhs = np.array([_final_field(params, base_env, s, stop) for s in (GROUND, EXCITED)])

    cols = []
    for i in idx:
        unit = base_env.with_segment(i, amplitude=1.0, phase=0.0)
        resp = [_final_field(params, unit, s, stop) for s in (GROUND, EXCITED)]
        cols.append(np.array(resp) - rhs)
    mat = np.column_stack(cols)
    scale = np.max(np.abs(mat))
    if scale == 0 or np.linalg.cond(mat) > 1e12:
        raise SingularSystemError("depletion segments cannot null both fields independently")
    c = np.linalg.solve(mat, -rhs)
    return complex(c[0]), complex(c[1])


def depleted_envelope(params: ReadoutParams, envelope: PulseEnvelope) -> PulseEnvelope:
    """Envelope with its two depletion segments set to the analytic solution."""
    return envelope.with_depletion(solve_depletion(params, envelope))
