"""Energy accounting, solar forecasting and the renewable-aware action rule.

Per-gNodeB electrical demand is beta_c * cpu_util + beta_b * bw_util; solar
panels offset up to the whole demand (never more), the rest is grid draw.
Irradiance is forecast with an ARIMA(2,1,2) fit by conditional least squares
and drives the three-way NRTS action rule against the 700 W/m^2 threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError
from .streams import substream
from .topology import Slice


@dataclass
class EnergyParams:
    beta_c_w: float = 50.0  # watts at full CPU utilization
    beta_b_w: float = 30.0  # watts at full bandwidth utilization
    theta_w_m2: float = 700.0  # renewable threshold
    horizon_h: float = 24.0  # forecast horizon
    lambda_weight: float = 0.5  # energy-latency objective weight
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)  # per-slice dissatisfaction
    targets_j: tuple[float, float, float] | None = None  # per-slice energy budgets
    panel_area_m2: float = 2.0
    panel_efficiency: float = 0.2
    idle_draw_fraction: float = 0.3  # reserved-but-idle resources still draw this share
    max_delay_s: float = 300.0  # NRTS deferral budget before a forced grant

    def validate(self) -> None:
        if self.beta_c_w <= 0 or self.beta_b_w <= 0:
            raise ConfigError("beta coefficients must be positive")
        if self.theta_w_m2 <= 0:
            raise ConfigError("renewable threshold must be positive")
        if any(w < 0 for w in self.weights):
            raise ConfigError("dissatisfaction weights must be nonnegative")
        if not 0.0 <= self.lambda_weight <= 1.0:
            raise ConfigError("lambda_weight must lie in [0, 1]")
        if not 0.0 <= self.idle_draw_fraction <= 1.0:
            raise ConfigError("idle_draw_fraction must lie in [0, 1]")
        if self.panel_area_m2 < 0 or not 0 <= self.panel_efficiency <= 1:
            raise ConfigError("panel parameters out of range")
        if self.max_delay_s < 0:
            raise ConfigError("max_delay_s must be nonnegative")


class SolarAction(Enum):
    ALLOCATE_RENEWABLE = "allocate_renewable"
    DELAY_ALLOCATION = "delay_allocation"
    IMMEDIATE_ALLOCATION = "immediate_allocation"


def solar_action(slc: Slice, forecast_irradiance: float, theta: float) -> SolarAction:
    """Three-way renewable-aware rule; the boundary I == theta delays."""
    if slc in (Slice.LSS, Slice.RTS):
        return SolarAction.IMMEDIATE_ALLOCATION
    if forecast_irradiance > theta:
        return SolarAction.ALLOCATE_RENEWABLE
    return SolarAction.DELAY_ALLOCATION


def step_energy(c_util, b_util, dt_s: float, irradiance_w_m2, params: EnergyParams):
    """Split one step's electrical demand into (grid_watts, renewable_watts).

    Accepts scalars or broadcastable arrays (e.g. one entry per gNodeB, or a
    (step, gNodeB) grid); utilizations must lie in [0, 1]. Renewable supply
    is panel_area * efficiency * irradiance, clamped so it never exceeds
    demand; grid + renewable == demand exactly.
    """
    c_util = np.asarray(c_util, dtype=float)
    b_util = np.asarray(b_util, dtype=float)
    demand_w = params.beta_c_w * c_util + params.beta_b_w * b_util
    supply_w = (
        params.panel_area_m2
        * params.panel_efficiency
        * np.maximum(np.asarray(irradiance_w_m2, dtype=float), 0.0)
    )
    renewable_w = np.minimum(demand_w, supply_w)
    grid_w = demand_w - renewable_w
    return grid_w, renewable_w


def dissatisfaction(actual, target, weights) -> float:
    """Sum of weighted squared relative per-slice energy deviations."""
    actual = np.asarray(actual, dtype=float)
    target = np.asarray(target, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if np.any(target <= 0):
        raise ConfigError("dissatisfaction targets must be positive")
    return float(np.sum(weights * ((actual - target) / target) ** 2))


@dataclass
class SolarTrace:
    """Synthetic diurnal irradiance: clear-sky curve plus AR(1) clouds.

    shape "half_sine" puts a sine arch between sunrise and sunset and a flat
    dark night outside it; shape "hann" is the raised-cosine day curve
    peak * sin^2(pi * day_fraction), a pure sinusoid in time that touches
    zero only at midnight (useful where a kink-free curve is wanted).
    resolution_s is the sample spacing (1 minute at the real-time day length).
    """

    peak_w_m2: float = 1000.0
    day_length_s: float = 86_400.0
    sunrise_frac: float = 0.25
    sunset_frac: float = 0.75
    cloud_rho: float = 0.9
    cloud_sigma_w_m2: float = 20.0
    resolution_s: float = 60.0
    seed: int = 0
    shape: str = "half_sine"

    def __post_init__(self):
        if not 0 <= self.sunrise_frac < self.sunset_frac <= 1:
            raise ConfigError("need 0 <= sunrise_frac < sunset_frac <= 1")
        if self.peak_w_m2 < 0 or self.day_length_s <= 0 or self.resolution_s <= 0:
            raise ConfigError("solar trace scales must be positive")
        if not 0 <= self.cloud_rho < 1 or self.cloud_sigma_w_m2 < 0:
            raise ConfigError("cloud AR(1) parameters out of range")
        if self.shape not in ("half_sine", "hann"):
            raise ConfigError(f"unknown solar trace shape {self.shape!r}")

    def clear_sky(self, t_s) -> np.ndarray:
        frac = np.mod(np.asarray(t_s, dtype=float) / self.day_length_s, 1.0)
        if self.shape == "hann":
            return self.peak_w_m2 * np.sin(np.pi * frac) ** 2
        day = (frac >= self.sunrise_frac) & (frac < self.sunset_frac)
        phase = (frac - self.sunrise_frac) / (self.sunset_frac - self.sunrise_frac)
        return np.where(day, self.peak_w_m2 * np.sin(np.pi * np.clip(phase, 0, 1)), 0.0)

    def generate(self, start_s: float, n_steps: int) -> np.ndarray:
        """Ground-truth series at resolution_s spacing from start_s."""
        t = start_s + self.resolution_s * np.arange(n_steps)
        clear = self.clear_sky(t)
        rng = substream(self.seed, "solar", int(start_s), n_steps)
        clouds = np.zeros(n_steps)
        c = 0.0
        noise = rng.normal(0.0, self.cloud_sigma_w_m2, size=n_steps)
        for k in range(n_steps):
            c = self.cloud_rho * c + noise[k]
            clouds[k] = c
        out = np.where(clear > 0, np.maximum(0.0, clear + clouds), 0.0)
        return out


def _stabilize_ar(phi: np.ndarray) -> np.ndarray:
    """Shrink explosive AR(2) roots onto the unit circle.

    Noisy least-squares fits can land the companion roots slightly outside
    the unit disk, which would make the integrated forecast blow up
    exponentially; scaling the roots by 1/r preserves the oscillation.
    """
    companion = np.array([[phi[0], phi[1]], [1.0, 0.0]])
    radius = float(np.max(np.abs(np.linalg.eigvals(companion))))
    if radius > 1.0:
        return np.array([phi[0] / radius, phi[1] / radius**2])
    return phi


@dataclass
class ArimaFit:
    phi: np.ndarray  # AR coefficients (2,)
    theta: np.ndarray  # MA coefficients (2,)
    mu: float  # drift of the differenced series
    last_level: float
    tail_w: np.ndarray  # last p centered differences
    tail_e: np.ndarray  # last q residuals
    degenerate: bool = False


def fit_arima_212(history, max_iterations: int = 5) -> ArimaFit:
    """Conditional-least-squares ARIMA(2,1,2) on the once-differenced series.

    AR coefficients come from an OLS regression on two lags of the centered
    differences; MA terms are added by regressing on lagged residuals and
    re-estimating residuals a fixed number of times.
    """
    y = np.asarray(history, dtype=float)
    if y.size < 50:
        raise ValueError("ARIMA fit needs at least 50 history steps")
    w = np.diff(y)
    if np.allclose(w, 0.0):
        return ArimaFit(
            phi=np.zeros(2), theta=np.zeros(2), mu=0.0, last_level=float(y[-1]),
            tail_w=np.zeros(2), tail_e=np.zeros(2), degenerate=True,
        )
    mu = float(w.mean())
    wc = w - mu
    p, q = 2, 2

    def ar_design(resid=None):
        rows = len(wc) - p
        cols = [wc[p - 1 : p - 1 + rows], wc[p - 2 : p - 2 + rows]]
        if resid is not None:
            cols.append(resid[p - 1 : p - 1 + rows])
            cols.append(resid[p - 2 : p - 2 + rows])
        return np.column_stack(cols), wc[p:]

    x, target = ar_design()
    coef, *_ = np.linalg.lstsq(x, target, rcond=None)
    phi, theta = coef[:p].copy(), np.zeros(q)

    resid = np.zeros_like(wc)
    for _ in range(max_iterations):
        pred = np.zeros_like(wc)
        for t in range(p, len(wc)):
            pred[t] = (
                phi[0] * wc[t - 1] + phi[1] * wc[t - 2]
                + theta[0] * resid[t - 1] + theta[1] * resid[t - 2]
            )
        resid = wc - pred
        resid[:p] = 0.0
        x, target = ar_design(resid)
        coef, *_ = np.linalg.lstsq(x, target, rcond=None)
        phi, theta = coef[:p], coef[p:]

    phi = _stabilize_ar(np.asarray(phi, dtype=float))
    return ArimaFit(
        phi=phi,
        theta=np.asarray(theta, dtype=float),
        mu=mu,
        last_level=float(y[-1]),
        tail_w=wc[-p:][::-1].copy(),  # [w_{T}, w_{T-1}]
        tail_e=resid[-q:][::-1].copy(),
    )


def forecast_arima(fit: ArimaFit, horizon: int) -> np.ndarray:
    """Mean forecast: recurse the difference model with future shocks at zero,
    integrate back to levels and clamp at zero."""
    if fit.degenerate:
        return np.full(horizon, max(fit.last_level, 0.0))
    w1, w2 = fit.tail_w
    e1, e2 = fit.tail_e
    level = fit.last_level
    out = np.empty(horizon)
    for h in range(horizon):
        wc_hat = fit.phi[0] * w1 + fit.phi[1] * w2 + fit.theta[0] * e1 + fit.theta[1] * e2
        level += wc_hat + fit.mu
        out[h] = level
        w2, w1 = w1, wc_hat
        e2, e1 = e1, 0.0
    return np.maximum(out, 0.0)


def forecast_solar(history, horizon: int) -> np.ndarray:
    """ARIMA(2,1,2) irradiance forecast; constant histories short-circuit to
    a flat continuation of the last value."""
    return forecast_arima(fit_arima_212(history), horizon)
