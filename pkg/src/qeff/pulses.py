"""Piecewise readout-pulse envelopes.

An envelope is a list of segments on a uniform sample grid followed by a
zero-drive buffer.  Each segment drives the resonator with
``amplitude * exp(1j * phase) * shape[k]`` during sample interval ``k``
(zero-order hold, as an AWG would play it).  Constant segments have
``shape == 1``; user-sampled segments carry an explicit complex shape.

Times are in seconds.  Envelope files use nanoseconds, see
:func:`load_envelope`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

DEFAULT_SAMPLE_PERIOD = 1e-9

# Pulse timing used throughout the experiment: 600 ns ramp, two 200 ns
# depletion steps and a 100 ns buffer.
NOMINAL_RAMP = 600e-9
NOMINAL_DEPLETION = (200e-9, 200e-9)
NOMINAL_BUFFER = 100e-9
NOMINAL_PASSIVE_WAIT = 1500e-9


def _n_steps(duration: float, dt: float) -> int:
    n = duration / dt
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-6 * max(1.0, n):
        raise InvalidInputError(
            f"duration {duration!r} is not a positive multiple of the sample period {dt!r}")
    return k


@dataclass(frozen=True)
class PulseSegment:
    """One piece of the drive.

    ``samples`` is ``None`` for a constant segment, otherwise a complex
    array with one entry per sample interval.
    """

    duration: float
    amplitude: float = 0.0
    phase: float = 0.0
    samples: np.ndarray | None = field(default=None, compare=False)
    role: str = "ramp"

    def __post_init__(self):
        if not (np.isfinite(self.duration) and self.duration > 0):
            raise InvalidInputError(f"segment duration must be positive, got {self.duration!r}")
        if not (np.isfinite(self.amplitude) and np.isfinite(self.phase)):
            raise InvalidInputError("segment amplitude and phase must be finite")
        if self.role not in ("ramp", "depletion"):
            raise InvalidInputError(f"unknown segment role {self.role!r}")
        if self.samples is not None:
            s = np.asarray(self.samples, dtype=complex)
            if s.ndim != 1 or not np.all(np.isfinite(s)):
                raise InvalidInputError("segment samples must be a finite 1-d array")
            object.__setattr__(self, "samples", s)

    @property
    def is_constant(self) -> bool:
        return self.samples is None

    @property
    def complex_amplitude(self) -> complex:
        return self.amplitude * np.exp(1j * self.phase)

    def n_steps(self, dt: float) -> int:
        n = _n_steps(self.duration, dt)
        if self.samples is not None and len(self.samples) != n:
            raise InvalidInputError(
                f"segment has {len(self.samples)} samples but spans {n} sample periods")
        return n

    def shape(self, dt: float) -> np.ndarray:
        n = self.n_steps(dt)
        if self.samples is None:
            return np.ones(n, dtype=complex)
        return self.samples


@dataclass(frozen=True)
class PulseEnvelope:
    segments: tuple[PulseSegment, ...]
    sample_period: float = DEFAULT_SAMPLE_PERIOD
    buffer: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise InvalidInputError("envelope needs at least one segment")
        if not (np.isfinite(self.sample_period) and self.sample_period > 0):
            raise InvalidInputError("sample period must be positive")
        if self.buffer < 0 or not np.isfinite(self.buffer):
            raise InvalidInputError("buffer must be a non-negative time")
        for seg in self.segments:
            seg.n_steps(self.sample_period)
        if self.buffer > 0:
            _n_steps(self.buffer, self.sample_period)

    @property
    def segment_steps(self) -> list[int]:
        return [seg.n_steps(self.sample_period) for seg in self.segments]

    @property
    def buffer_steps(self) -> int:
        return 0 if self.buffer == 0 else _n_steps(self.buffer, self.sample_period)

    @property
    def n_steps(self) -> int:
        return sum(self.segment_steps) + self.buffer_steps

    @property
    def duration(self) -> float:
        """Total window T = sum of segment durations + buffer."""
        return self.n_steps * self.sample_period

    @property
    def drive_duration(self) -> float:
        return sum(self.segment_steps) * self.sample_period

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.sample_period

    @property
    def depletion_indices(self) -> list[int]:
        return [i for i, seg in enumerate(self.segments) if seg.role == "depletion"]

    def segment_start(self, index: int) -> int:
        """Grid index at which segment ``index`` starts."""
        return sum(self.segment_steps[:index])

    def drive(self) -> np.ndarray:
        """Complex drive per sample interval (length ``n_steps``)."""
        parts = [seg.complex_amplitude * seg.shape(self.sample_period) for seg in self.segments]
        parts.append(np.zeros(self.buffer_steps, dtype=complex))
        return np.concatenate(parts)

    def scaled(self, factor: float) -> "PulseEnvelope":
        """Globally scale every segment amplitude (the experiment's epsilon sweep)."""
        segs = tuple(replace(seg, amplitude=seg.amplitude * factor) for seg in self.segments)
        return replace(self, segments=segs)

    def with_segment(self, index: int, **changes) -> "PulseEnvelope":
        segs = list(self.segments)
        segs[index] = replace(segs[index], **changes)
        return replace(self, segments=tuple(segs))

    def with_depletion(self, amplitudes: Sequence[complex]) -> "PulseEnvelope":
        """Set the depletion segments from complex amplitudes ``eps * exp(1j*phi)``."""
        idx = self.depletion_indices
        if len(idx) != len(amplitudes):
            raise InvalidInputError(
                f"envelope has {len(idx)} depletion segments, got {len(amplitudes)} amplitudes")
        env = self
        for i, c in zip(idx, amplitudes):
            env = env.with_segment(i, amplitude=float(abs(c)), phase=float(np.angle(c)))
        return env

    def without_depletion(self) -> "PulseEnvelope":
        return self.with_depletion([0.0] * len(self.depletion_indices))


def square_ramp_envelope(epsilon: float = 1.0, *, ramp: float = NOMINAL_RAMP,
                         depletion: Sequence[float] = NOMINAL_DEPLETION,
                         buffer: float = NOMINAL_BUFFER,
                         sample_period: float = DEFAULT_SAMPLE_PERIOD) -> PulseEnvelope:
    """Constant ramp-up at phase 0 followed by constant depletion steps (initially off)."""
    segs = [PulseSegment(ramp, epsilon, 0.0)]
    segs += [PulseSegment(d, 0.0, 0.0, role="depletion") for d in depletion]
    return PulseEnvelope(tuple(segs), sample_period, buffer)


def two_step_envelope(epsilon: float = 1.0, *, kick: float = 200e-9, kick_ratio: float = 2.0,
                      ramp: float = NOMINAL_RAMP, depletion: Sequence[float] = NOMINAL_DEPLETION,
                      buffer: float = NOMINAL_BUFFER,
                      sample_period: float = DEFAULT_SAMPLE_PERIOD) -> PulseEnvelope:
    """Ramp with an initial kick at ``kick_ratio * epsilon`` then a hold at ``epsilon``."""
    if not 0 < kick < ramp:
        raise InvalidInputError("kick must be shorter than the ramp")
    segs = [PulseSegment(kick, kick_ratio * epsilon, 0.0),
            PulseSegment(ramp - kick, epsilon, 0.0)]
    segs += [PulseSegment(d, 0.0, 0.0, role="depletion") for d in depletion]
    return PulseEnvelope(tuple(segs), sample_period, buffer)


def passive_envelope(epsilon: float = 1.0, *, ramp: float = NOMINAL_RAMP,
                     wait: float = NOMINAL_PASSIVE_WAIT,
                     sample_period: float = DEFAULT_SAMPLE_PERIOD) -> PulseEnvelope:
    """Ramp-up followed by a zero-drive wait (depletion by waiting)."""
    return PulseEnvelope((PulseSegment(ramp, epsilon, 0.0),), sample_period, wait)


def facade(width: int, height: float, *, steps: int = 3, eave: float = 0.55,
           step_frac: float = 0.12) -> np.ndarray:
    """Outline of a step-gabled house front sampled on ``width`` points.

    The outline sits at ``eave * height`` at the walls and climbs ``steps``
    equal stairs to ``height`` in the middle.  Shapes are real and positive.
    """
    x = (np.arange(width) + 0.5) / width
    dist = np.abs(x - 0.5)
    stair = np.floor((0.5 - dist) / step_frac)
    stair = np.clip(stair, 0, steps)
    return eave * height + (1 - eave) * height * stair / steps


def skyline_envelope(epsilon: float = 1.0, *,
                     houses: Sequence[tuple[float, float]] = ((200e-9, 0.8), (180e-9, 1.0),
                                                              (220e-9, 0.9)),
                     depletion: Sequence[float] = (240e-9, 160e-9),
                     buffer: float = NOMINAL_BUFFER,
                     sample_period: float = DEFAULT_SAMPLE_PERIOD) -> PulseEnvelope:
    """Five canal-house facades: the first few ramp up, the last two deplete.

    ``houses`` lists (duration, relative height) of the ramp-up facades.  The
    depletion facades are unit-height shapes whose amplitude and phase are
    left at zero for tuning.
    """
    segs = []
    for dur, height in houses:
        n = _n_steps(dur, sample_period)
        segs.append(PulseSegment(dur, epsilon, 0.0, facade(n, height).astype(complex)))
    for dur in depletion:
        n = _n_steps(dur, sample_period)
        segs.append(PulseSegment(dur, 0.0, 0.0, facade(n, 1.0).astype(complex), role="depletion"))
    return PulseEnvelope(tuple(segs), sample_period, buffer)


# ---------------------------------------------------------------- file I/O

def envelope_to_dict(env: PulseEnvelope) -> dict:
    segs = []
    for seg in env.segments:
        d = {"duration_ns": seg.duration * 1e9, "amplitude": seg.amplitude,
             "phase_rad": seg.phase, "role": seg.role}
        if seg.samples is not None:
            d["samples"] = [[float(z.real), float(z.imag)] for z in seg.samples]
        segs.append(d)
    return {"sample_period_ns": env.sample_period * 1e9, "buffer_ns": env.buffer * 1e9,
            "segments": segs}


_ENVELOPE_KEYS = {"sample_period_ns", "buffer_ns", "segments"}
_SEGMENT_KEYS = {"duration_ns", "amplitude", "phase_rad", "role", "samples"}


def envelope_from_dict(data: dict) -> PulseEnvelope:
    """Build an envelope from its JSON representation (strict: unknown keys rejected)."""
    if not isinstance(data, dict):
        raise InvalidInputError("envelope must be a JSON object")
    extra = set(data) - _ENVELOPE_KEYS
    if extra:
        raise InvalidInputError(f"unknown envelope keys: {sorted(extra)}")
    if "segments" not in data:
        raise InvalidInputError("envelope needs a 'segments' list")
    dt = float(data.get("sample_period_ns", 1.0)) * 1e-9
    segs = []
    for i, s in enumerate(data["segments"]):
        if not isinstance(s, dict):
            raise InvalidInputError(f"segment {i} must be an object")
        extra = set(s) - _SEGMENT_KEYS
        if extra:
            raise InvalidInputError(f"segment {i}: unknown keys {sorted(extra)}")
        samples = None
        if "samples" in s:
            arr = np.asarray(s["samples"], dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise InvalidInputError(f"segment {i}: samples must be [re, im] pairs")
            samples = arr[:, 0] + 1j * arr[:, 1]
        if "duration_ns" in s:
            duration = float(s["duration_ns"]) * 1e-9
        elif samples is not None:
            duration = len(samples) * dt
        else:
            raise InvalidInputError(f"segment {i}: needs duration_ns or samples")
        segs.append(PulseSegment(duration, float(s.get("amplitude", 1.0)),
                                 float(s.get("phase_rad", 0.0)), samples,
                                 s.get("role", "ramp")))
    return PulseEnvelope(tuple(segs), dt, float(data.get("buffer_ns", 0.0)) * 1e-9)


def load_envelope(path: str | Path) -> PulseEnvelope:
    """Read an envelope JSON file.

    Schema::

        {"sample_period_ns": 1.0,
         "buffer_ns": 100,
         "segments": [
            {"duration_ns": 600, "amplitude": 1.0, "phase_rad": 0.0},
            {"samples": [[re, im], ...], "amplitude": 0.0, "role": "depletion"}]}
    """
    with open(path) as fh:
        return envelope_from_dict(json.load(fh))


def save_envelope(env: PulseEnvelope, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(envelope_to_dict(env), fh, indent=1)
