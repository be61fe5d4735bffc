"""Statistics and model fitting: fringes, fidelity, SNR and decay curves.

Fringe fits use a sinusoid with weighted linear least squares at fixed
period (weights from Poisson counting errors) and a one-dimensional period
search on top when the period is left free.  The visibility error combines
the delta-method statistical error of amplitude/offset with an optional
systematic allowance for slow drifts, configured per analysis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize


class FitError(ValueError):
    """Raised when input data cannot support the requested fit."""


@dataclass
class FringeDataset:
    """Coincidence counts versus an analyzer setting (angle or delay)."""

    settings: np.ndarray
    coincidences: np.ndarray
    singles: Optional[np.ndarray] = None

    def __post_init__(self):
        self.settings = np.asarray(self.settings, dtype=float)
        self.coincidences = np.asarray(self.coincidences, dtype=float)
        if self.singles is not None:
            self.singles = np.asarray(self.singles, dtype=float)

    def validate(self) -> None:
        if len(self.settings) != len(self.coincidences):
            raise FitError("settings and coincidences differ in length")
        if len(self.settings) < 4:
            raise FitError("need at least 4 settings for a fringe fit")
        if np.any(self.coincidences < 0.0):
            raise FitError("counts must be non-negative")
        if np.ptp(self.settings) == 0.0:
            raise FitError("all settings are equal; fringe is undefined")


@dataclass
class VisibilityEstimate:
    v: float
    sigma_v: float
    phase: float
    offset: float
    period: float
    sigma_stat: float = 0.0


def _sinusoid_lstsq(x, y, w, period):
    """Weighted LS of y = a + b cos(2 pi x/T) + c sin(2 pi x/T); returns
    (beta, cov, weighted SSE)."""
    arg = 2.0 * math.pi * x / period
    design = np.column_stack([np.ones_like(x), np.cos(arg), np.sin(arg)])
    wd = design * w[:, None]
    normal = design.T @ wd
    try:
        cov = np.linalg.inv(normal)
    except np.linalg.LinAlgError as exc:
        raise FitError("degenerate fringe design matrix") from exc
    beta = cov @ (wd.T @ y)
    resid = y - design @ beta
    return beta, cov, float(np.sum(w * resid**2))


def fit_fringe(
    data: FringeDataset,
    period: Optional[float] = None,
    excess_sigma_v: float = 0.0,
) -> VisibilityEstimate:
    """Least-squares sinusoid; V = amplitude / offset.

    ``period`` fixes the fringe period; None leaves it free (grid search
    plus local refinement).  ``excess_sigma_v`` is added in quadrature to
    the Poisson statistical error.
    """
    data.validate()
    x = data.settings
    y = data.coincidences
    w = 1.0 / np.maximum(y, 1.0)   # Poisson: var = counts

    if period is not None:
        best_period = float(period)
    else:
        span = float(np.ptp(x))
        gaps = np.diff(np.sort(np.unique(x)))
        min_period = 4.0 * float(gaps.min())
        grid = np.geomspace(max(min_period, span / 8.0), 3.0 * span, 120)
        sses = [_sinusoid_lstsq(x, y, w, t)[2] for t in grid]
        t0 = grid[int(np.argmin(sses))]
        res = optimize.minimize_scalar(
            lambda t: _sinusoid_lstsq(x, y, w, t)[2],
            bounds=(t0 / 1.5, t0 * 1.5),
            method="bounded",
            options={"xatol": 1e-10 * t0},
        )
        best_period = float(res.x)

    beta, cov, _ = _sinusoid_lstsq(x, y, w, best_period)
    a, b, c = beta
    amp = math.hypot(b, c)
    if a <= 0.0:
        raise FitError("non-positive fitted offset")
    v = amp / a
    phase = math.atan2(-c, b)   # y = a + amp cos(2 pi x/T + phase)
    if amp > 0.0:
        grad = np.array([-amp / a**2, b / (amp * a), c / (amp * a)])
    else:
        grad = np.array([0.0, 1.0 / a, 1.0 / a])
    sigma_stat = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
    sigma_total = math.hypot(sigma_stat, excess_sigma_v)
    return VisibilityEstimate(
        v=float(min(v, 1.0)),
        sigma_v=sigma_total,
        phase=phase,
        offset=float(a),
        period=best_period,
        sigma_stat=sigma_stat,
    )


def fidelity_from_visibilities(vz: float, vx: float) -> float:
    """Entanglement fidelity estimate (1 + Vz + 2 Vx) / 4."""
    for name, v in (("vz", vz), ("vx", vx)):
        if not -1.0 <= v <= 1.0:
            raise ValueError(f"{name} = {v} outside [-1, 1]")
    return (1.0 + vz + 2.0 * vx) / 4.0


def solve_r_exc(
    length_km: float,
    target_snr: float,
    r_noise_cps: float = 257.0,
    r_dark_cps: float = 38.0,
    atten_db_per_km: float = 0.2,
) -> float:
    """Excitation rate making the SNR model hit ``target_snr`` at ``length_km``."""
    x = 10.0 ** (-atten_db_per_km * length_km / 10.0)
    return target_snr * (r_noise_cps * x + r_dark_cps) / x - r_noise_cps


@dataclass
class SnrModelParams:
    """Rates (CPS) and attenuation of the distance-scaling SNR model."""

    r_exc_cps: float = field(default_factory=lambda: solve_r_exc(100.0, 6.9))
    r_noise_cps: float = 257.0
    r_dark_cps: float = 38.0
    atten_db_per_km: float = 0.2

    def validate(self) -> None:
        for name in ("r_exc_cps", "r_noise_cps", "r_dark_cps", "atten_db_per_km"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")


def snr_model(length_km, params: SnrModelParams):
    """Distance scaling of the write-out SNR.

    Converter noise rides along with the signal and attenuates identically,
    so only the dark-count floor degrades the ratio with distance:

        SNR(L) = (R_exc + R_noise) T(L) / (R_noise T(L) + R_dark),
        T(L) = 10^(-atten L / 10)
    """
    length = np.asarray(length_km, dtype=float)
    t = 10.0 ** (-params.atten_db_per_km * length / 10.0)
    out = (params.r_exc_cps + params.r_noise_cps) * t / (
        params.r_noise_cps * t + params.r_dark_cps
    )
    return float(out) if np.isscalar(length_km) else out


@dataclass
class SnrFitResult:
    params: SnrModelParams
    cov_diag: np.ndarray
    residual_norm: float
    converged: bool


def fit_snr_model(
    lengths_km,
    snrs,
    init: Optional[SnrModelParams] = None,
    fit_dark: bool = False,
) -> SnrFitResult:
    """Nonlinear least squares of the SNR model.

    The ratio model is invariant under a common rescaling of the three
    rates, so by default the dark rate stays fixed at its initial value
    (it is an independently measured detector property) and the fit runs
    over {r_exc, r_noise, atten}.  ``fit_dark=True`` frees it as well,
    accepting the scale degeneracy.
    """
    lengths = np.asarray(lengths_km, dtype=float)
    snrs = np.asarray(snrs, dtype=float)
    if lengths.size < 4:
        raise FitError("need at least 4 points to fit the SNR model")
    if init is None:
        init = SnrModelParams()
    names = ["r_exc_cps", "r_noise_cps", "atten_db_per_km"] + (
        ["r_dark_cps"] if fit_dark else []
    )
    x0 = np.log([getattr(init, n) for n in names])

    def unpack(logp) -> SnrModelParams:
        vals = dict(zip(names, np.exp(logp)))
        return SnrModelParams(
            r_exc_cps=vals["r_exc_cps"],
            r_noise_cps=vals["r_noise_cps"],
            r_dark_cps=vals.get("r_dark_cps", init.r_dark_cps),
            atten_db_per_km=vals["atten_db_per_km"],
        )

    def residuals(logp):
        return snr_model(lengths, unpack(logp)) - snrs

    res = optimize.least_squares(residuals, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    fitted = unpack(res.x)
    # Covariance of the physical parameters via the log-space jacobian.
    jac = res.jac * np.exp(res.x)[None, :]
    try:
        cov = np.linalg.inv(jac.T @ jac) * max(
            2.0 * res.cost / max(lengths.size - len(names), 1), 1e-30
        )
        cov_diag = np.diag(cov)
    except np.linalg.LinAlgError:
        cov_diag = np.full(len(names), np.nan)
    return SnrFitResult(
        params=fitted,
        cov_diag=cov_diag,
        residual_norm=float(np.linalg.norm(res.fun)),
        converged=bool(res.success),
    )


@dataclass
class DecayFit:
    eta0: float
    tau_us: float
    shape: str
    per_shape: dict


def fit_decay(times_us, etas) -> DecayFit:
    """Fit both decay shapes anchored to their 1/e point; score residuals."""
    t = np.asarray(times_us, dtype=float)
    y = np.asarray(etas, dtype=float)
    if t.size < 4:
        raise FitError("need at least 4 points to fit a decay")
    if np.ptp(y) < 1e-12 * max(abs(y).max(), 1.0):
        per_shape = {
            s: {"eta0": float(y.mean()), "tau_us": math.inf, "rss": 0.0}
            for s in ("gaussian", "exponential")
        }
        return DecayFit(float(y.mean()), math.inf, "gaussian", per_shape)

    span = float(np.ptp(t)) or 1.0
    per_shape = {}
    for shape in ("gaussian", "exponential"):
        if shape == "gaussian":
            model = lambda tt, e0, tau: e0 * np.exp(-((tt / tau) ** 2))
        else:
            model = lambda tt, e0, tau: e0 * np.exp(-tt / tau)
        try:
            popt, _ = optimize.curve_fit(
                model, t, y, p0=[float(y.max()), span], maxfev=20000
            )
            rss = float(np.sum((model(t, *popt) - y) ** 2))
            per_shape[shape] = {"eta0": float(popt[0]), "tau_us": float(abs(popt[1])), "rss": rss}
        except RuntimeError:
            per_shape[shape] = {"eta0": math.nan, "tau_us": math.nan, "rss": math.inf}
    best = min(per_shape, key=lambda s: per_shape[s]["rss"])
    return DecayFit(
        eta0=per_shape[best]["eta0"],
        tau_us=per_shape[best]["tau_us"],
        shape=best,
        per_shape=per_shape,
    )


@dataclass
class EfficiencyCurveFit:
    eta_max: float
    alpha_nor: float
    residual_norm: float


def fit_efficiency_curve(
    powers_w, etas, crystal_length_mm: float = 50.0
) -> EfficiencyCurveFit:
    """Fit eta(P) = eta_max sin^2(sqrt(alpha P) L) to measured points."""
    p = np.asarray(powers_w, dtype=float)
    y = np.asarray(etas, dtype=float)
    if p.size < 3:
        raise FitError("need at least 3 points to fit the conversion curve")
    if np.all(y == 0.0):
        return EfficiencyCurveFit(0.0, (math.pi / 2.0) ** 2 / (max(p.max(), 1.0) * crystal_length_mm**2), 0.0)

    def model(pp, eta_max, alpha):
        return eta_max * np.sin(np.sqrt(np.abs(alpha) * pp) * crystal_length_mm) ** 2

    p_at_max = float(p[np.argmax(y)]) or float(p.max())
    alpha0 = (math.pi / 2.0) ** 2 / (p_at_max * crystal_length_mm**2)
    popt, _ = optimize.curve_fit(
        model, p, y, p0=[float(y.max()), alpha0], maxfev=20000,
        xtol=1e-15, ftol=1e-15, gtol=1e-15,
    )
    resid = float(np.linalg.norm(model(p, *popt) - y))
    return EfficiencyCurveFit(float(popt[0]), float(abs(popt[1])), resid)
