"""Fits that turn simulated (or measured) data into an efficiency estimate.

Histograms of integrated shots give the SNR, Ramsey fringes give the
coherence |rho01|; sweeping the drive amplitude and fitting
``SNR = a eps`` and ``|rho01| = b exp(-eps^2 / 2 sigma_m^2)`` yields
``eta_e = a^2 sigma_m^2 / 2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .errors import FitFailure, InvalidInputError
from .homodyne_sim import IntegratedShot, RamseyFringeData, shot_rng, shots_to_array

log = logging.getLogger(__name__)

_LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class DoubleGaussianFit:
    mu_main: float
    sigma_main: float
    mu_spur: float
    sigma_spur: float
    frac_main: float
    n_shots: int
    mu_main_err: float
    sigma_main_err: float
    n_components: int = 2
    loglik: float = float("nan")
    n_iter: int = 0
    converged: bool = True


@dataclass(frozen=True)
class SnrPoint:
    epsilon: float
    snr: float
    snr_err: float


@dataclass(frozen=True)
class CoherencePoint:
    epsilon: float
    rho01: float
    rho01_err: float
    phi0: float


@dataclass(frozen=True)
class GaussianDecayFit:
    b: float
    sigma_m: float
    b_err: float
    sigma_err: float
    covariance: np.ndarray = field(repr=False)
    chi2_red: float = float("nan")


@dataclass(frozen=True)
class LinearSnrFit:
    a: float
    a_err: float


@dataclass(frozen=True)
class EtaExtraction:
    a: float
    sigma_m: float
    b: float
    eta_e: float
    eta_err: float
    a_err: float
    sigma_err: float

    def as_dict(self) -> dict:
        return {"a": self.a, "a_err": self.a_err, "sigma_m": self.sigma_m,
                "sigma_m_err": self.sigma_err, "b": self.b, "eta_e": self.eta_e,
                "eta_err": self.eta_err}


# ----------------------------------------------------------- double Gaussian

def _normal_logpdf(x, mu, sigma):
    return -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * _LOG_2PI


def _em(x: np.ndarray, mu, sigma, w, max_iter: int, tol: float, counts=None):
    """Two-component EM on samples ``x`` (optionally with multiplicities ``counts``).

    Returns (mu, sigma, w, loglik, n_iter, status) with status one of
    ``"converged"``, ``"max_iter"`` or ``"collapsed"`` (a component lost all
    its weight).
    """
    c = np.ones_like(x) if counts is None else np.asarray(counts, float)
    n = c.sum()
    mu, sigma, w = (np.array(v, dtype=float) for v in (mu, sigma, w))
    floor = 1e-6 * np.sqrt(np.average((x - np.average(x, weights=c)) ** 2, weights=c))
    prev = -np.inf
    for it in range(1, max_iter + 1):
        lp = np.log(w)[:, None] + _normal_logpdf(x[None, :], mu[:, None], sigma[:, None])
        norm = np.logaddexp(lp[0], lp[1])
        ll = float(norm @ c)
        resp = np.exp(lp - norm) * c
        nk = resp.sum(axis=1)
        if np.any(nk < 1e-9 * n):
            return mu, sigma, w, ll, it, "collapsed"
        w = nk / n
        mu = resp @ x / nk
        sigma = np.sqrt(np.maximum((resp * (x[None, :] - mu[:, None]) ** 2).sum(axis=1) / nk,
                                   floor ** 2))
        if ll - prev < tol * n:
            return mu, sigma, w, ll, it, "converged"
        prev = ll
    return mu, sigma, w, ll, max_iter, "max_iter"


def _single_gaussian(x: np.ndarray) -> DoubleGaussianFit:
    n = len(x)
    mu, sd = float(np.mean(x)), float(np.std(x))
    ll = float(np.sum(_normal_logpdf(x, mu, sd)))
    return DoubleGaussianFit(mu, sd, mu, sd, 1.0, n, float(sd / np.sqrt(n)), float(sd / np.sqrt(2 * n)),
                             n_components=1, loglik=ll, n_iter=0, converged=True)


def fit_double_gaussian(shots: Sequence[IntegratedShot] | np.ndarray, *, method: str = "em",
                        max_iter: int = 500, tol: float = 1e-9,
                        min_shots: int = 1000, bins: int = 1024) -> DoubleGaussianFit:
    """Fit a main + spurious Gaussian mixture to the shots of one preparation.

    EM is started from the 10th/90th percentiles (and two tail-seeded
    starts, keeping the best likelihood).  The larger-weight component is
    the main one.  When the mixture does not beat a single Gaussian by the
    BIC, the single Gaussian is returned with ``frac_main = 1``.

    Model selection runs EM on a fine histogram (``bins`` weighted centres)
    to stay cheap; a selected mixture is then refined on the raw shots.
    Reaching ``max_iter`` ends the iteration (flagged ``converged=False``);
    only non-finite results raise :class:`FitFailure`.
    """
    x = shots_to_array(shots)
    if len(x) < min_shots:
        raise InvalidInputError(f"need at least {min_shots} shots, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("shots contain non-finite values")
    if np.ptp(x) == 0:
        raise InvalidInputError("all shots are identical")
    if method == "histogram":
        return _fit_histogram(x)
    if method != "em":
        raise InvalidInputError(f"unknown method {method!r}")

    single = _single_gaussian(x)
    n = len(x)
    p1, p10, p50, p90, p99 = np.percentile(x, [1, 10, 50, 90, 99])
    sd = single.sigma_main
    starts = [((p10, p90), (sd / 2, sd / 2), (0.5, 0.5)),
              ((p50, p1), (sd, sd / 4), (0.9, 0.1)),
              ((p50, p99), (sd, sd / 4), (0.9, 0.1))]
    counts, edges = np.histogram(x, bins=bins)
    keep = counts > 0
    centers = (0.5 * (edges[1:] + edges[:-1]))[keep]
    counts = counts[keep]
    # likelihood of the binned single Gaussian, for a like-for-like comparison
    binned_single = float(counts @ _normal_logpdf(centers, single.mu_main, single.sigma_main))
    best = None
    for mu0, s0, w0 in starts:
        res = _em(centers, mu0, s0, w0, max_iter, tol, counts)
        if res[5] != "collapsed" and (best is None or res[3] > best[3]):
            best = res

    # BIC with 3 extra free parameters for the second component
    if best is None or 2 * (best[3] - binned_single) <= 3 * np.log(n):
        return single
    mu, sigma, w, ll, n_iter, status = _em(x, *best[:3], max_iter, tol)
    if status == "collapsed":
        return single
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma)) and np.isfinite(ll)):
        raise FitFailure("double-Gaussian EM produced non-finite parameters",
                         {"n_iter": n_iter, "loglik": ll, "mu": mu.tolist(),
                          "sigma": sigma.tolist(), "weights": w.tolist()})
    if status == "max_iter":
        log.warning("double-Gaussian EM stopped at the %d-iteration cap", max_iter)
    m, s = (0, 1) if w[0] >= w[1] else (1, 0)
    n_main = w[m] * n
    return DoubleGaussianFit(float(mu[m]), float(sigma[m]), float(mu[s]), float(sigma[s]),
                             float(w[m]), n, float(sigma[m] / np.sqrt(n_main)),
                             float(sigma[m] / np.sqrt(2 * n_main)), 2, ll, n_iter,
                             status == "converged")


def _mixture_density(x, mu1, s1, mu2, s2, f):
    return f * stats.norm.pdf(x, mu1, s1) + (1 - f) * stats.norm.pdf(x, mu2, s2)


def _fit_histogram(x: np.ndarray) -> DoubleGaussianFit:
    """Least-squares fit of the mixture density to a binned histogram."""
    counts, edges = np.histogram(x, bins="auto", density=True)
    centers = 0.5 * (edges[1:] + edges[:-1])
    em = fit_double_gaussian(x, method="em")
    p0 = [em.mu_main, em.sigma_main, em.mu_spur, em.sigma_spur, min(em.frac_main, 0.99)]
    lo = [-np.inf, 1e-12, -np.inf, 1e-12, 0.5]
    hi = [np.inf, np.inf, np.inf, np.inf, 1.0]
    try:
        popt, pcov = optimize.curve_fit(_mixture_density, centers, counts, p0=p0,
                                        bounds=(lo, hi))
    except RuntimeError as exc:
        raise FitFailure(f"histogram fit failed: {exc}") from exc
    err = np.sqrt(np.diag(pcov))
    return DoubleGaussianFit(popt[0], popt[1], popt[2], popt[3], popt[4], len(x),
                             err[0], err[1], n_components=2, converged=True)


# ---------------------------------------------------------------------- SNR

def compute_snr(fit0: DoubleGaussianFit, fit1: DoubleGaussianFit, epsilon: float = 0.0, *,
                method: str = "delta", shots0=None, shots1=None, n_boot: int = 200,
                seed=0) -> SnrPoint:
    """SNR = |mu_main(1) - mu_main(0)| / mean(sigma_main).

    Errors come from the delta method on the main-component standard errors,
    or from ``n_boot`` bootstrap refits when ``method='bootstrap'`` (needs the
    raw shots).
    """
    sep = abs(fit1.mu_main - fit0.mu_main)
    noise = 0.5 * (fit0.sigma_main + fit1.sigma_main)
    snr = sep / noise
    if method == "delta":
        var_s = fit0.mu_main_err ** 2 + fit1.mu_main_err ** 2
        var_n = 0.25 * (fit0.sigma_main_err ** 2 + fit1.sigma_main_err ** 2)
        err = np.sqrt(var_s / noise ** 2 + sep ** 2 * var_n / noise ** 4)
    elif method == "bootstrap":
        if shots0 is None or shots1 is None:
            raise InvalidInputError("bootstrap needs the raw shots of both preparations")
        x0, x1 = shots_to_array(shots0), shots_to_array(shots1)
        rng = shot_rng(seed, 17)
        vals = []
        for _ in range(n_boot):
            b0 = fit_double_gaussian(rng.choice(x0, len(x0)))
            b1 = fit_double_gaussian(rng.choice(x1, len(x1)))
            vals.append(abs(b1.mu_main - b0.mu_main) / (0.5 * (b0.sigma_main + b1.sigma_main)))
        err = float(np.std(vals, ddof=1))
    else:
        raise InvalidInputError(f"unknown error method {method!r}")
    return SnrPoint(float(epsilon), float(snr), float(max(err, np.finfo(float).tiny)))


# ------------------------------------------------------------------- Ramsey

def fit_ramsey_fringe(data: RamseyFringeData, epsilon: float = 0.0) -> CoherencePoint:
    """Fit sigma_z = 2|rho01| cos(phi + phi0) by linear least squares.

    The model is linearised as ``A cos(phi) + B sin(phi)``.  The squared
    amplitude is debiased by the variance the noise adds to A^2 + B^2
    before taking the root (floored at zero).
    """
    phi = np.asarray(data.phi, float)
    y = np.asarray(data.sigma_z, float)
    if len(phi) < 3:
        raise InvalidInputError("need more phase points than fit parameters")
    if np.ptp(phi) < 2 * np.pi - 1e-9:
        raise InvalidInputError("phase points must span at least 2 pi")
    X = np.column_stack([np.cos(phi), np.sin(phi)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    A, B = coef
    resid = y - X @ coef
    s2 = float(resid @ resid) / (len(y) - 2)
    cov = s2 * np.linalg.inv(X.T @ X)
    va, vb, cab = cov[0, 0], cov[1, 1], cov[0, 1]
    raw2 = A * A + B * B
    amp = np.sqrt(max(raw2 - va - vb, 0.0))
    if raw2 > 0:
        amp_var = (A * A * va + B * B * vb + 2 * A * B * cab) / raw2
    else:
        amp_var = 0.5 * (va + vb)
    return CoherencePoint(float(epsilon), float(amp / 2), float(np.sqrt(amp_var) / 2),
                          float(np.arctan2(-B, A)))


def gaussian_decay(eps, b, sigma):
    return b * np.exp(-np.asarray(eps) ** 2 / (2 * sigma ** 2))


def fit_gaussian_decay(points: Sequence[CoherencePoint]) -> GaussianDecayFit:
    """Weighted Levenberg-Marquardt fit of |rho01| = b exp(-eps^2 / 2 sigma_m^2)."""
    if len(points) < 4:
        raise InvalidInputError("need at least 4 coherence points")
    eps = np.array([p.epsilon for p in points], float)
    rho = np.array([p.rho01 for p in points], float)
    err = np.array([p.rho01_err for p in points], float)
    if np.all(err == 0):
        err = np.ones_like(err)
    else:
        err = np.where(err > 0, err, np.min(err[err > 0]))
    b0 = float(np.max(rho))
    if b0 <= 0:
        raise FitFailure("no coherence left to fit", {"rho01": rho.tolist()})
    order = np.argsort(eps)
    e, r = eps[order], rho[order]
    # half-Gaussian second moment on the sampled grid
    s0 = np.sqrt(np.trapezoid(r * e ** 2, e) / np.trapezoid(r, e)) if np.ptp(e) > 0 else 1.0
    try:
        popt, pcov = optimize.curve_fit(gaussian_decay, eps, rho, p0=[b0, s0], sigma=err,
                                        absolute_sigma=False, method="lm", maxfev=10000)
    except (RuntimeError, optimize.OptimizeWarning) as exc:
        raise FitFailure(f"Gaussian decay fit failed: {exc}", {"p0": [b0, s0]}) from exc
    if not np.all(np.isfinite(pcov)):
        raise FitFailure("Gaussian decay fit has undefined covariance", {"popt": popt.tolist()})
    b, sigma = popt[0], abs(popt[1])
    resid = (rho - gaussian_decay(eps, b, sigma)) / err
    dof = max(len(eps) - 2, 1)
    return GaussianDecayFit(float(b), float(sigma), float(np.sqrt(pcov[0, 0])),
                            float(np.sqrt(pcov[1, 1])), pcov, float(resid @ resid / dof))


def fit_linear_snr(points: Sequence[SnrPoint]) -> LinearSnrFit:
    """Weighted least squares of SNR = a eps through the origin (eps = 0 points ignored)."""
    pts = [p for p in points if p.epsilon != 0]
    if len(pts) < 3:
        raise InvalidInputError("need at least 3 points with nonzero epsilon")
    x = np.array([p.epsilon for p in pts])
    y = np.array([p.snr for p in pts])
    w = 1 / np.array([p.snr_err for p in pts]) ** 2
    sxx = np.sum(w * x * x)
    a = float(np.sum(w * x * y) / sxx)
    s2 = float(np.sum(w * (y - a * x) ** 2)) / (len(x) - 1)
    return LinearSnrFit(abs(a), float(np.sqrt(s2 / sxx)))


def extract_eta(a: float, sigma_m: float, a_err: float = 0.0, sigma_err: float = 0.0,
                b: float = float("nan")) -> EtaExtraction:
    """eta_e = a^2 sigma_m^2 / 2 with first-order error propagation.

    The SNR slope and the dephasing scale come from separate experiments and
    are treated as independent.
    """
    if not (a > 0 and sigma_m > 0):
        raise InvalidInputError("a and sigma_m must be positive")
    eta = a * a * sigma_m * sigma_m / 2
    err = eta * np.hypot(2 * a_err / a, 2 * sigma_err / sigma_m)
    return EtaExtraction(float(a), float(sigma_m), float(b), float(eta), float(err),
                         float(a_err), float(sigma_err))


# -------------------------------------------------------------------- tests

def anderson_darling_normal(x) -> tuple[float, float]:
    """Anderson-Darling statistic and p-value for normality with estimated mean/variance.

    Uses the modified statistic A*^2 = A^2 (1 + 0.75/n + 2.25/n^2) and the
    D'Agostino & Stephens (1986) p-value approximation.
    """
    x = np.asarray(x, float)
    n = len(x)
    a2 = float(stats.anderson(x, dist="norm").statistic)
    a = a2 * (1 + 0.75 / n + 2.25 / n ** 2)
    if a >= 0.6:
        p = np.exp(1.2937 - 5.709 * a + 0.0186 * a * a)
    elif a >= 0.34:
        p = np.exp(0.9177 - 4.279 * a - 1.38 * a * a)
    elif a >= 0.2:
        p = 1 - np.exp(-8.318 + 42.796 * a - 59.938 * a * a)
    else:
        p = 1 - np.exp(-13.436 + 101.14 * a - 223.73 * a * a)
    return a2, float(min(max(p, 0.0), 1.0))
