"""Three-stage efficiency model of the readout amplification chain.

    eta(G) = eta_pre * eta_twpa(G) * eta_post(G)

``eta_pre`` lumps all losses before the traveling-wave amplifier.  The
amplifier itself is an interleaved array of quantum-limited gain sections
and attenuating sections whose losses add up to the insertion loss.  The
following chain adds a fixed noise temperature referred back through the
amplifier gain.

Noise is counted in quanta referred to the amplifier input.  ``eta_twpa`` is
the noise of an ideal quantum-limited amplifier of the same gain divided by
the noise of the lossy distributed one, so a lossless amplifier gives 1.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import constants, optimize

from .errors import FitFailure, InvalidInputError

NOMINAL_FREQ = 7.8524e9
NOMINAL_GAIN_DB = 21.6


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, float) / 10.0)


@dataclass(frozen=True)
class ChainParams:
    eta_pre: float
    insertion_loss_db: float
    t_noise: float
    n_sections: int = 100
    freq: float = NOMINAL_FREQ

    def __post_init__(self):
        if not 0 < self.eta_pre <= 1:
            raise InvalidInputError("eta_pre must lie in (0, 1]")
        if self.insertion_loss_db < 0 or self.t_noise < 0:
            raise InvalidInputError("insertion loss and noise temperature must be non-negative")
        if self.n_sections < 1 or self.freq <= 0:
            raise InvalidInputError("n_sections must be >= 1 and freq positive")


@dataclass(frozen=True)
class GainEtaPoint:
    gain_db: float
    eta_e: float
    eta_err: float

    def __post_init__(self):
        if not 0 < self.eta_e <= 1:
            raise InvalidInputError(f"eta_e must lie in (0, 1], got {self.eta_e}")
        if self.eta_err <= 0:
            raise InvalidInputError("eta_err must be positive")


def added_quanta_twpa(gain_db, insertion_loss_db, n_sections: int = 100):
    """Input-referred added noise quanta of the interleaved gain/loss array.

    Each of the ``n`` sections is a quantum-limited gain stage
    ``g = (G L)^(1/n)`` sandwiched between two half-loss stages
    ``l = L^(-1/(2n))``, so gain and attenuation alternate along the line
    and the discretisation error falls off as 1/n^2.  A gain stage adds
    (g-1)/2 quanta at its output and a loss stage (1-l)/2; both are referred
    to the input by dividing by the cumulative gain after the stage.  Every
    section contributes the same amount up to a factor 1/G^(k/n), so the
    sum is geometric.
    """
    G = db_to_linear(gain_db)
    L = db_to_linear(insertion_loss_db)
    n = int(n_sections)
    g = (G * L) ** (1.0 / n)
    l = L ** (-0.5 / n)
    r = g * l * l
    per_section = 0.5 * ((1 - l) / l + (g - 1) / (g * l) + (1 - l) / r)
    with np.errstate(divide="ignore", invalid="ignore"):
        geo = np.where(np.isclose(r, 1.0, rtol=0, atol=1e-15), float(n),
                       (1 - r ** -n) / (1 - 1 / r))
    return per_section * geo


def eta_twpa_distributed(gain_db, insertion_loss_db, n_sections: int = 100):
    """Efficiency of the distributed-loss amplifier relative to a lossless one."""
    if np.any(np.asarray(gain_db) < 0):
        raise InvalidInputError("gain_db must be non-negative")
    G = db_to_linear(gain_db)
    ideal = 0.5 + 0.5 * (1 - 1 / G)
    return ideal / (0.5 + added_quanta_twpa(gain_db, insertion_loss_db, n_sections))


def eta_post(gain_db, t_noise: float, freq: float = NOMINAL_FREQ):
    """1 / (1 + 2 k_B T_N / (h f G)): following-chain noise against half a quantum."""
    n_th = constants.k * t_noise / (constants.h * freq)
    return 1.0 / (1.0 + 2.0 * n_th / db_to_linear(gain_db))


def eta_chain(params: ChainParams, gain_db):
    return (params.eta_pre
            * eta_twpa_distributed(gain_db, params.insertion_loss_db, params.n_sections)
            * eta_post(gain_db, params.t_noise, params.freq))


def stage_curves(params: ChainParams, gains_db) -> dict[str, np.ndarray]:
    g = np.asarray(gains_db, float)
    return {"gain_db": g,
            "eta_pre": np.full_like(g, params.eta_pre),
            "eta_twpa": eta_twpa_distributed(g, params.insertion_loss_db, params.n_sections),
            "eta_post": eta_post(g, params.t_noise, params.freq),
            "eta": eta_chain(params, g)}


@dataclass
class ChainFit:
    params: ChainParams
    covariance: np.ndarray = field(repr=False)
    errors: dict
    chi2: float
    dof: int
    residuals: np.ndarray = field(repr=False)

    @property
    def chi2_red(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    def as_dict(self) -> dict:
        return {"params": asdict(self.params), "errors": self.errors, "chi2": self.chi2,
                "dof": self.dof, "chi2_red": self.chi2_red,
                "covariance": self.covariance.tolist()}


# eta_pre, insertion loss (dB), noise temperature (K)
PARAM_NAMES = ("eta_pre", "insertion_loss_db", "t_noise")
_STARTS = [(e, l, t) for e in (0.1, 0.5) for l in (1.0, 6.0) for t in (1.0, 6.0)]
_LOWER, _UPPER = (1e-6, 0.0, 0.0), (1.0, 40.0, 300.0)


def fit_chain(points: Sequence[GainEtaPoint], n_sections: int = 100,
              freq: float = NOMINAL_FREQ, fixed: dict[str, float] | None = None) -> ChainFit:
    """Weighted least-squares fit of (eta_pre, insertion loss, T_N) to (gain, eta) data.

    Bounded trust-region least squares from eight starting points; the best
    final cost wins.  The covariance is scaled by the reduced chi-square.
    ``fixed`` pins any of the three parameters (by name) to a known value,
    for instance an insertion loss measured separately; pinned parameters
    get zero error.
    """
    fixed = dict(fixed or {})
    unknown = set(fixed) - set(PARAM_NAMES)
    if unknown:
        raise InvalidInputError(f"unknown chain parameters {sorted(unknown)}")
    free = [i for i, name in enumerate(PARAM_NAMES) if name not in fixed]
    if not free:
        raise InvalidInputError("at least one chain parameter must be free")
    if len(points) < len(free) + 1:
        raise FitFailure(f"underdetermined: need at least {len(free) + 1} (gain, eta) points",
                         {"n_points": len(points)})
    g = np.array([p.gain_db for p in points], float)
    y = np.array([p.eta_e for p in points], float)
    s = np.array([p.eta_err for p in points], float)
    if np.ptp(g) < 10:
        raise FitFailure("underdetermined: gain points must span at least 10 dB",
                         {"gain_span_db": float(np.ptp(g))})

    def full(xf):
        x = [fixed.get(name, 0.0) for name in PARAM_NAMES]
        for i, v in zip(free, xf):
            x[i] = v
        return x

    def resid(xf):
        x = full(xf)
        model = x[0] * eta_twpa_distributed(g, x[1], n_sections) * eta_post(g, x[2], freq)
        return (model - y) / s

    lo = [_LOWER[i] for i in free]
    hi = [_UPPER[i] for i in free]
    scale = [(0.1, 1.0, 1.0)[i] for i in free]
    starts = sorted({tuple(x0[i] for i in free) for x0 in _STARTS})
    best = None
    for x0 in starts:
        try:
            r = optimize.least_squares(resid, x0, bounds=(lo, hi), method="trf",
                                       x_scale=scale, xtol=1e-12, ftol=1e-12,
                                       gtol=1e-12, max_nfev=2000)
        except ValueError:
            continue
        if r.success and (best is None or r.cost < best.cost):
            best = r
    if best is None:
        raise FitFailure("chain fit did not converge from any starting point")
    dof = len(g) - len(free)
    chi2 = float(2 * best.cost)
    jac = best.jac
    try:
        cov_free = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        cov_free = np.full((len(free), len(free)), np.nan)
    if dof > 0:
        cov_free = cov_free * chi2 / dof
    cov = np.zeros((3, 3))
    cov[np.ix_(free, free)] = cov_free
    err = np.sqrt(np.abs(np.diag(cov)))
    x = full(best.x)
    params = ChainParams(float(x[0]), float(x[1]), float(x[2]), n_sections, freq)
    return ChainFit(params, cov, {name: float(e) for name, e in zip(PARAM_NAMES, err)},
                    chi2, dof, best.fun)


# --------------------------------------------------------------- pump map

@dataclass(frozen=True)
class GainRidge:
    """Phenomenological amplifier gain over pump power and frequency.

    The gain in dB is a Gaussian ridge of height ``peak_db`` centred at
    ``(power_dbm, freq_ghz)``; the ridge centre in power moves linearly with
    pump frequency by ``tilt`` dB per GHz.  Only meant to give the
    efficiency map a realistic single maximum.
    """
    peak_db: float = 21.6
    power_dbm: float = -71.0
    freq_ghz: float = 8.13
    power_width_db: float = 1.5
    freq_width_ghz: float = 0.08
    tilt: float = 0.0

    def __post_init__(self):
        if self.peak_db < 0 or self.power_width_db <= 0 or self.freq_width_ghz <= 0:
            raise InvalidInputError("gain ridge needs non-negative peak and positive widths")

    def gain_db(self, power_dbm, freq_ghz):
        p, f = np.meshgrid(np.asarray(power_dbm, float), np.asarray(freq_ghz, float),
                           indexing="ij")
        centre = self.power_dbm + self.tilt * (f - self.freq_ghz)
        r2 = ((p - centre) / self.power_width_db) ** 2 + ((f - self.freq_ghz)
                                                           / self.freq_width_ghz) ** 2
        return self.peak_db * np.exp(-0.5 * r2)


def pump_map(params: ChainParams, ridge: GainRidge, power_dbm, freq_ghz) -> dict:
    """Chain efficiency on a (pump power, pump frequency) grid and its maximum."""
    power_dbm = np.asarray(power_dbm, float)
    freq_ghz = np.asarray(freq_ghz, float)
    gain = ridge.gain_db(power_dbm, freq_ghz)
    eta = eta_chain(params, gain)
    i, j = np.unravel_index(int(np.argmax(eta)), eta.shape)
    return {"power_dbm": power_dbm, "freq_ghz": freq_ghz, "gain_db": gain, "eta": eta,
            "best": {"power_dbm": float(power_dbm[i]), "freq_ghz": float(freq_ghz[j]),
                     "gain_db": float(gain[i, j]), "eta": float(eta[i, j])}}


# -------------------------------------------------------------------- I/O

def read_points_csv(path: str | Path) -> list[GainEtaPoint]:
    """Read ``gain_db, eta_e, eta_err`` rows (header required)."""
    pts = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["gain_db", "eta_e", "eta_err"]:
            raise InvalidInputError("line 1: expected header 'gain_db,eta_e,eta_err'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise InvalidInputError(f"line {lineno}: expected 3 columns, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise InvalidInputError(f"line {lineno}: non-numeric value in {row!r}") from None
            try:
                pts.append(GainEtaPoint(*vals))
            except InvalidInputError as exc:
                raise InvalidInputError(f"line {lineno}: {exc}") from None
    return pts


def write_points_csv(path: str | Path, points: Sequence[GainEtaPoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gain_db", "eta_e", "eta_err"])
        for p in points:
            w.writerow([repr(float(p.gain_db)), repr(float(p.eta_e)), repr(float(p.eta_err))])


def write_stage_curves_csv(path: str | Path, params: ChainParams, gains_db) -> None:
    curves = stage_curves(params, gains_db)
    keys = list(curves)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in zip(*(curves[k] for k in keys)):
            w.writerow([repr(float(v)) for v in row])


def write_pump_map_csv(path: str | Path, grid: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["power_dbm", "freq_ghz", "gain_db", "eta"])
        for i, p in enumerate(grid["power_dbm"]):
            for j, f in enumerate(grid["freq_ghz"]):
                w.writerow([repr(float(p)), repr(float(f)), repr(float(grid["gain_db"][i, j])),
                            repr(float(grid["eta"][i, j]))])


def write_fit_json(path: str | Path, fit: ChainFit) -> None:
    with open(path, "w") as fh:
        json.dump(fit.as_dict(), fh, indent=2, sort_keys=True)
