"""Stochastic homodyne records, weighted integration and Ramsey fringe data.

Per sample ``k`` the two quadratures are

    V_I[k] = V0 (sqrt(2 kappa eta) Re alpha(t_k) + g_k / sqrt(dt))
    V_Q[k] = V0 (sqrt(2 kappa eta) Im alpha(t_k) + g'_k / sqrt(dt))

with independent standard-normal ``g``, ``g'``; the ``1/sqrt(dt)`` factor
discretises unit-variance white noise.  The state-independent feedthrough
of the drive is left out because only the |1> - |0> difference matters.

Every random draw comes from a generator keyed by ``(seed, *stream keys)``
so results do not depend on the order in which shots are produced.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cavity_dynamics import (EXCITED, GROUND, FieldTrajectory, ReadoutParams, WeightFunctions,
                              compute_trajectory, dephasing_exponent, deterministic_phase)
from .errors import InvalidInputError
from .pulses import PulseEnvelope

# stream tags mixed into the seed material
STREAM_RECORD = 1
STREAM_SHOTS = 2
STREAM_PREP = 3
STREAM_RAMSEY = 4
STREAM_TRANSIENT = 5


def _seed_words(seed) -> list[int]:
    if isinstance(seed, (int, np.integer)):
        words = [int(seed)]
    else:
        words = [int(s) for s in seed]
    if any(w < 0 for w in words):
        raise InvalidInputError("seeds must be non-negative integers")
    return words


def shot_rng(seed, *keys: int) -> np.random.Generator:
    """Generator for the stream identified by ``seed`` and integer ``keys``."""
    return np.random.default_rng(_seed_words(seed) + [int(k) for k in keys])


def signal_gain(params: ReadoutParams) -> float:
    """V0 sqrt(2 kappa eta): volts per unit field amplitude."""
    return params.v0 * np.sqrt(2 * params.kappa * params.eta)


@dataclass(frozen=True)
class ShotRecord:
    v_i: np.ndarray
    v_q: np.ndarray
    prepared_state: int
    seed: int
    sample_period: float
    shot_index: int = 0


@dataclass(frozen=True)
class IntegratedShot:
    v_int: float
    prepared_state: int


@dataclass(frozen=True)
class RamseyFringeData:
    phi: np.ndarray
    sigma_z: np.ndarray
    shots_per_point: int

    def __post_init__(self):
        if np.any(np.abs(self.sigma_z) > 1):
            raise InvalidInputError("sigma_z estimates must lie in [-1, 1]")


def mean_transients(traj: FieldTrajectory, params: ReadoutParams,
                    state: int) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free averaged transients <V_I>, <V_Q> for one preparation."""
    a = signal_gain(params) * traj.field(state)
    return a.real.copy(), a.imag.copy()


def generate_record(traj: FieldTrajectory, params: ReadoutParams, state: int, seed,
                    shot_index: int = 0) -> ShotRecord:
    """One single-shot homodyne record; deterministic in ``(seed, state, shot_index)``."""
    if state not in (GROUND, EXCITED):
        raise InvalidInputError(f"state must be 0 or 1, got {state!r}")
    dt = traj.sample_period
    rng = shot_rng(seed, STREAM_RECORD, state, shot_index)
    noise = rng.standard_normal((2, len(traj.times))) / np.sqrt(dt)
    mi, mq = mean_transients(traj, params, state)
    return ShotRecord(mi + params.v0 * noise[0], mq + params.v0 * noise[1], state,
                      seed, dt, shot_index)


def trapezoid_coefficients(n: int, dt: float) -> np.ndarray:
    c = np.full(n, dt)
    c[0] = c[-1] = dt / 2
    return c


def integrate_shot(record: ShotRecord, weights: WeightFunctions) -> IntegratedShot:
    """V_int = int w_I V_I + w_Q V_Q dt, trapezoid rule on the record grid."""
    if len(record.v_i) != len(weights.w_i) or len(record.v_q) != len(weights.w_q):
        raise InvalidInputError("record and weights use different grids")
    c = trapezoid_coefficients(len(record.v_i), record.sample_period)
    v = float(np.sum(c * (weights.w_i * record.v_i + weights.w_q * record.v_q)))
    return IntegratedShot(v, record.prepared_state)


def integrated_moments(traj: FieldTrajectory, params: ReadoutParams,
                       weights: WeightFunctions) -> tuple[float, float, float]:
    """Exact (mean|0>, mean|1>, std) of the trapezoid-integrated record."""
    n = len(traj.times)
    if len(weights.w_i) != n:
        raise InvalidInputError("weights and trajectory use different grids")
    c = trapezoid_coefficients(n, traj.sample_period)
    means = []
    for s in (GROUND, EXCITED):
        mi, mq = mean_transients(traj, params, s)
        means.append(float(np.sum(c * (weights.w_i * mi + weights.w_q * mq))))
    # noise of sample k enters as c_k w_k g_k / sqrt(dt)
    var = params.v0 ** 2 * np.sum(c ** 2 * (weights.w_i ** 2 + weights.w_q ** 2)) / traj.sample_period
    return means[0], means[1], float(np.sqrt(var))


def sample_integrated_shots(traj: FieldTrajectory, params: ReadoutParams,
                            weights: WeightFunctions, state: int, n_shots: int, seed,
                            prep_error: float = 0.0) -> np.ndarray:
    """Integrated shots drawn directly from their exact Gaussian distribution.

    Integration is linear, so V_int of a white-noise record is Gaussian with
    the moments of :func:`integrated_moments`.  This is equivalent in
    distribution to integrating :func:`generate_record` output, at a tiny
    fraction of the cost.  With ``prep_error = p`` each shot is prepared in
    the wrong state with probability ``p``.
    """
    if not 0 <= prep_error < 0.5:
        raise InvalidInputError("prep_error must lie in [0, 0.5)")
    m0, m1, sd = integrated_moments(traj, params, weights)
    means = np.full(n_shots, m1 if state == EXCITED else m0)
    if prep_error > 0:
        flip = shot_rng(seed, STREAM_PREP, state).random(n_shots) < prep_error
        means[flip] = m0 if state == EXCITED else m1
    return means + sd * shot_rng(seed, STREAM_SHOTS, state).standard_normal(n_shots)


def averaged_transients(traj: FieldTrajectory, params: ReadoutParams, state: int,
                        n_avg: int | None, seed=0) -> tuple[np.ndarray, np.ndarray]:
    """Averaged transients over ``n_avg`` records (``None`` for the noiseless mean).

    The average of ``n_avg`` records has per-sample noise
    ``V0 / sqrt(dt * n_avg)``, drawn here directly.
    """
    mi, mq = mean_transients(traj, params, state)
    if n_avg is None:
        return mi, mq
    if n_avg < 1:
        raise InvalidInputError("n_avg must be positive")
    sd = params.v0 / np.sqrt(traj.sample_period * n_avg)
    noise = shot_rng(seed, STREAM_TRANSIENT, state).standard_normal((2, len(mi)))
    return mi + sd * noise[0], mq + sd * noise[1]


def simulate_ramsey(params: ReadoutParams, envelope: PulseEnvelope, n_phases: int = 32,
                    shots_per_point: int = 1024, seed=0, baseline: float = 1.0,
                    phase_offset: float = 0.0,
                    traj: FieldTrajectory | None = None) -> RamseyFringeData:
    """Ramsey fringe with the measurement pulse embedded between the pi/2 pulses.

    The ideal fringe is ``2|rho01| cos(phi + phi0)`` with
    ``|rho01| = baseline/2 * exp(-Gamma_m)`` and ``phi0`` the deterministic
    phase plus ``phase_offset``.  Each point is a binomial estimate of
    <sigma_z> from ``shots_per_point`` projective measurements.
    """
    if n_phases < 8:
        raise InvalidInputError("need at least 8 phase points")
    if not 0 < baseline <= 1:
        raise InvalidInputError("baseline contrast must lie in (0, 1]")
    if traj is None:
        traj = compute_trajectory(params, envelope)
    rho = 0.5 * baseline * np.exp(-dephasing_exponent(traj, params.chi))
    phi0 = deterministic_phase(traj, params.chi) + phase_offset
    phi = np.linspace(0.0, 4 * np.pi, n_phases)
    p_up = 0.5 * (1 + 2 * rho * np.cos(phi + phi0))
    k = shot_rng(seed, STREAM_RAMSEY).binomial(shots_per_point, np.clip(p_up, 0, 1))
    return RamseyFringeData(phi, 2 * k / shots_per_point - 1, shots_per_point)


# -------------------------------------------------------------------- dumps

def write_shots_csv(path: str | Path, shots: dict[int, Iterable[float]]) -> None:
    """Write ``shot_index, prepared_state, v_int`` rows for each preparation."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["shot_index", "prepared_state", "v_int"])
        for state in sorted(shots):
            for i, v in enumerate(shots[state]):
                w.writerow([i, state, repr(float(v))])


def read_shots_csv(path: str | Path) -> dict[int, np.ndarray]:
    out: dict[int, list[float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(int(row["prepared_state"]), []).append(float(row["v_int"]))
    return {k: np.array(v) for k, v in out.items()}


def write_record_csv(path: str | Path, record: ShotRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ns", "v_i", "v_q"])
        for k, (vi, vq) in enumerate(zip(record.v_i, record.v_q)):
            w.writerow([f"{k * record.sample_period * 1e9:.6f}", repr(float(vi)), repr(float(vq))])


def shots_to_array(shots: Sequence[IntegratedShot] | np.ndarray) -> np.ndarray:
    if isinstance(shots, np.ndarray):
        return shots.astype(float)
    return np.array([s.v_int if isinstance(s, IntegratedShot) else float(s) for s in shots])
