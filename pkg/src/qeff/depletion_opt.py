"""Depletion tune-up: Nelder-Mead on the averaged-transient cost.

The two depletion steps each have an amplitude and a phase.  The cost
penalises residual averaged transients for both qubit states in a window of
length ``tau_c`` after the depletion, plus (weighted by ``d``) the per-quadrature
difference between the two states.  With linear dynamics the exact optimum
is available from :func:`qeff.cavity_dynamics.solve_depletion`, which the
tests use as an oracle.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .cavity_dynamics import EXCITED, GROUND, ReadoutParams, compute_trajectory
from .errors import InvalidInputError
from .homodyne_sim import averaged_transients
from .pulses import PulseEnvelope

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DepletionParams:
    eps_d0: float
    eps_d1: float
    phi_d0: float
    phi_d1: float

    def __post_init__(self):
        if not all(np.isfinite(v) for v in self.as_array()):
            raise InvalidInputError("depletion parameters must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.eps_d0, self.eps_d1, self.phi_d0, self.phi_d1], float)

    @classmethod
    def from_array(cls, x) -> "DepletionParams":
        return cls(*map(float, x))

    @classmethod
    def from_complex(cls, c0: complex, c1: complex) -> "DepletionParams":
        return cls(abs(c0), abs(c1), float(np.angle(c0)), float(np.angle(c1)))

    def to_complex(self) -> tuple[complex, complex]:
        return (self.eps_d0 * np.exp(1j * self.phi_d0), self.eps_d1 * np.exp(1j * self.phi_d1))

    def normalized(self) -> "DepletionParams":
        """Non-negative amplitudes, phases wrapped to [0, 2 pi)."""
        out = []
        for eps, phi in ((self.eps_d0, self.phi_d0), (self.eps_d1, self.phi_d1)):
            if eps < 0:
                eps, phi = -eps, phi + np.pi
            out.append((eps, float(np.mod(phi, 2 * np.pi))))
        return DepletionParams(out[0][0], out[1][0], out[0][1], out[1][1])

    def relative_to(self, epsilon: float) -> dict:
        return {"eps_d0_rel": self.eps_d0 / epsilon, "eps_d1_rel": self.eps_d1 / epsilon}


@dataclass(frozen=True)
class CostConfig:
    d: float = 10.0
    tau_c: float = 200e-9
    transients_shots: int = 2 ** 15

    def __post_init__(self):
        if self.d < 0:
            raise InvalidInputError("d must be non-negative")
        if self.tau_c <= 0:
            raise InvalidInputError("tau_c must be positive")
        if self.transients_shots < 1:
            raise InvalidInputError("transients_shots must be positive")


def apply_depletion(envelope: PulseEnvelope, dp: DepletionParams) -> PulseEnvelope:
    """Envelope with its two depletion segments set from ``dp`` (signed amplitudes allowed)."""
    idx = envelope.depletion_indices
    if len(idx) != 2:
        raise InvalidInputError(f"need exactly two depletion segments, got {len(idx)}")
    return envelope.with_depletion(dp.to_complex())


def tuneup_envelope(envelope: PulseEnvelope, config: CostConfig) -> PulseEnvelope:
    """Copy of ``envelope`` whose buffer is long enough to hold the cost window."""
    from dataclasses import replace
    dt = envelope.sample_period
    need = int(np.ceil(config.tau_c / dt - 1e-9)) * dt
    return replace(envelope, buffer=max(envelope.buffer, need))


def _window(envelope: PulseEnvelope, config: CostConfig) -> slice:
    idx = envelope.depletion_indices
    if len(idx) != 2:
        raise InvalidInputError(f"need exactly two depletion segments, got {len(idx)}")
    start = envelope.segment_start(max(idx) + 1)
    n = int(round(config.tau_c / envelope.sample_period))
    if start + n > envelope.n_steps:
        raise InvalidInputError("cost window extends beyond the end of the trajectory")
    if any(seg.amplitude != 0 for seg in envelope.segments[max(idx) + 1:]):
        raise InvalidInputError("drive must be zero after the depletion segments")
    return slice(start, start + n + 1)


def depletion_cost(params: ReadoutParams, envelope: PulseEnvelope, config: CostConfig = CostConfig(),
                   mode: str = "noiseless", seed=0) -> float:
    """Four-term cost on the averaged transients in the post-depletion window.

    ``mode='noiseless'`` uses the exact mean transients; ``mode='mc'``
    averages ``config.transients_shots`` noisy records per state.
    """
    win = _window(envelope, config)
    traj = compute_trajectory(params, envelope)
    n_avg = {"noiseless": None, "mc": config.transients_shots}.get(mode, -1)
    if n_avg == -1:
        raise InvalidInputError(f"unknown cost mode {mode!r}")
    i0, q0 = averaged_transients(traj, params, GROUND, n_avg, seed)
    i1, q1 = averaged_transients(traj, params, EXCITED, n_avg, seed)
    t = traj.times[win]

    def root_int(y):
        return np.sqrt(max(trapezoid(y[win] ** 2, t), 0.0))

    return float(np.sqrt(trapezoid(i0[win] ** 2 + q0[win] ** 2, t))
                 + np.sqrt(trapezoid(i1[win] ** 2 + q1[win] ** 2, t))
                 + config.d * root_int(i1 - i0) + config.d * root_int(q1 - q0))


def mc_noise_floor(params: ReadoutParams, config: CostConfig,
                   sample_period: float) -> tuple[float, float]:
    """Approximate (mean, std) of the Monte-Carlo cost when the field is fully depleted.

    Each root-integrated term is sqrt(dt * chi^2_M * v) for M window samples
    of noise variance v; its mean is ~sqrt(dt M v) and its std ~sqrt(dt v / 2).
    """
    var = params.v0 ** 2 / (sample_period * config.transients_shots)
    m = int(round(config.tau_c / sample_period)) + 1
    terms = [(2 * m, var, 1.0), (2 * m, var, 1.0), (m, 2 * var, config.d), (m, 2 * var, config.d)]
    mean = sum(w * np.sqrt(sample_period * k * v) for k, v, w in terms)
    std = np.sqrt(sum((w ** 2) * sample_period * v / 2 for k, v, w in terms))
    return float(mean), float(std)


# -------------------------------------------------------------- Nelder-Mead

@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    n_evals: int
    n_iter: int
    converged: bool
    trace: list = field(default_factory=list)


def nelder_mead(func: Callable[[np.ndarray], float], x0: Sequence[float],
                steps: Sequence[float], *, fatol: float = 1e-10, max_evals: int = 2000,
                alpha: float = 1.0, gamma: float = 2.0, rho: float = 0.5,
                sigma: float = 0.5) -> NelderMeadResult:
    """Minimise ``func`` with the downhill simplex method.

    The initial simplex is ``x0`` plus ``x0 + steps[i] e_i``.  Stops once
    the spread of function values over the simplex drops below ``fatol`` or
    after ``max_evals`` evaluations.  ``trace`` records the best vertex and
    its value after every iteration.
    """
    x0 = np.asarray(x0, float)
    dim = len(x0)
    simplex = [x0.copy()]
    for i in range(dim):
        v = x0.copy()
        v[i] += steps[i]
        simplex.append(v)
    simplex = np.array(simplex)
    fvals = np.array([func(v) for v in simplex])
    n_evals = dim + 1
    trace = []
    it = 0
    while True:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        trace.append((it, simplex[0].copy(), float(fvals[0])))
        if fvals[-1] - fvals[0] < fatol:
            return NelderMeadResult(simplex[0], float(fvals[0]), n_evals, it, True, trace)
        if n_evals >= max_evals:
            return NelderMeadResult(simplex[0], float(fvals[0]), n_evals, it, False, trace)
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + alpha * (centroid - worst)
        fr = func(xr)
        n_evals += 1
        if fr < fvals[0]:
            xe = centroid + gamma * (xr - centroid)
            fe = func(xe)
            n_evals += 1
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = centroid + rho * (xr - centroid)  # outside contraction
            fc = func(xc)
            n_evals += 1
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + rho * (worst - centroid)  # inside contraction
            fc = func(xc)
            n_evals += 1
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        for j in range(1, dim + 1):
            simplex[j] = simplex[0] + sigma * (simplex[j] - simplex[0])
            fvals[j] = func(simplex[j])
        n_evals += dim


@dataclass
class DepletionResult:
    params: DepletionParams
    cost: float
    n_evals: int
    converged: bool
    warning: str | None
    trace: list = field(default_factory=list, repr=False)

    def write_trace(self, path: str | Path) -> None:
        """CSV with ``iteration, eps_d0, eps_d1, phi_d0, phi_d1, cost``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "eps_d0", "eps_d1", "phi_d0", "phi_d1", "cost"])
            for it, x, f in self.trace:
                w.writerow([it, *map(repr, map(float, x)), repr(float(f))])


def ramp_amplitude(envelope: PulseEnvelope) -> float:
    """Peak drive amplitude of the ramp segments (1 when there are none)."""
    ramp = [abs(seg.amplitude) * (1.0 if seg.is_constant else float(np.max(np.abs(seg.samples))))
            for seg in envelope.segments if seg.role == "ramp"]
    return max(ramp) if ramp else 1.0


def optimize_depletion(params: ReadoutParams, envelope: PulseEnvelope,
                       initial: DepletionParams | None = None,
                       config: CostConfig = CostConfig(), mode: str = "noiseless", seed=0,
                       max_evals: int = 2000, fatol: float | None = None) -> DepletionResult:
    """Tune the two depletion steps of ``envelope`` by Nelder-Mead.

    The initial simplex steps are 20% of each starting amplitude (20% of the
    ramp amplitude when that is zero) and 0.2 rad in phase.  Noiseless mode
    stops at a cost spread of 1e-10; Monte-Carlo mode stops at the shot-noise
    spread of the cost and draws fresh noise for every evaluation.
    """
    env = tuneup_envelope(envelope, config)
    _window(env, config)
    if initial is None:
        initial = DepletionParams(0.0, 0.0, 0.0, 0.0)
    scale = ramp_amplitude(env)
    x0 = initial.as_array()
    steps = [0.2 * (abs(x0[0]) or scale), 0.2 * (abs(x0[1]) or scale), 0.2, 0.2]
    if fatol is None:
        fatol = 1e-10 if mode == "noiseless" else mc_noise_floor(params, config,
                                                                 env.sample_period)[1]
    counter = [0]

    def cost(x):
        counter[0] += 1
        words = list(seed) if not isinstance(seed, (int, np.integer)) else [int(seed)]
        return depletion_cost(params, apply_depletion(env, DepletionParams.from_array(x)),
                              config, mode, seed=words + [counter[0]])

    res = nelder_mead(cost, x0, steps, fatol=fatol, max_evals=max_evals)
    warning = None
    if not res.converged:
        warning = f"evaluation budget of {max_evals} exhausted; returning best point so far"
        log.warning(warning)
    best = DepletionParams.from_array(res.x).normalized()
    return DepletionResult(best, res.fun, res.n_evals, res.converged, warning, res.trace)


def analytic_depletion(params: ReadoutParams, envelope: PulseEnvelope) -> DepletionParams:
    from .cavity_dynamics import solve_depletion
    return DepletionParams.from_complex(*solve_depletion(params, envelope)).normalized()


def depletion_mismatch(found: DepletionParams, reference: DepletionParams) -> np.ndarray:
    """Per-parameter discrepancy: relative for the amplitudes, wrapped radians for the phases.

    A relative phase error is meaningless when the reference phase is 0 (as it
    is at zero detuning), so phases are compared on the circle instead.
    """
    a, b = found.as_array(), reference.as_array()
    amp = np.abs(a[:2] - b[:2]) / np.maximum(np.abs(b[:2]), np.finfo(float).tiny)
    phase = np.abs(np.angle(np.exp(1j * (a[2:] - b[2:]))))
    return np.concatenate([amp, phase])
