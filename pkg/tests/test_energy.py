import numpy as np
import pytest

from slicetwin.energy import (
    EnergyParams,
    SolarAction,
    SolarTrace,
    dissatisfaction,
    fit_arima_212,
    forecast_arima,
    forecast_solar,
    solar_action,
    step_energy,
)
from slicetwin.errors import ConfigError
from slicetwin.streams import substream
from slicetwin.topology import Slice

PARAMS = EnergyParams()


# ---- step_energy ---------------------------------------------------------------

def test_step_energy_all_zero():
    grid, renew = step_energy(0.0, 0.0, 1.0, 0.0, PARAMS)
    assert grid == 0.0 and renew == 0.0


def test_step_energy_cpu_only_hand_calc():
    grid, renew = step_energy(0.5, 0.0, 1.0, 0.0, PARAMS)
    assert grid == pytest.approx(25.0)
    assert renew == 0.0


def test_step_energy_renewable_clamped_at_demand():
    # demand 40 W, panel supply 2 m2 * 0.2 * 125 W/m2 = 100 W -> all renewable
    grid, renew = step_energy(0.5, 0.5, 1.0, 125.0 / 0.5 * 2, PARAMS)
    demand = 0.5 * 50 + 0.5 * 30
    assert renew == pytest.approx(demand)
    assert grid == pytest.approx(0.0)


def test_step_energy_conservation_exact():
    rng = substream(1, "cons")
    for _ in range(50):
        c, b = rng.uniform(0, 1, size=2)
        irr = rng.uniform(0, 1200)
        grid, renew = step_energy(c, b, 1.0, irr, PARAMS)
        assert grid + renew == PARAMS.beta_c_w * c + PARAMS.beta_b_w * b
        assert renew <= PARAMS.panel_area_m2 * PARAMS.panel_efficiency * irr + 1e-12
        assert grid >= 0.0


def test_step_energy_vectorized():
    grid, renew = step_energy(np.array([0.0, 1.0]), np.array([0.0, 1.0]), 1.0, 0.0, PARAMS)
    assert grid.tolist() == [0.0, 80.0]


# ---- dissatisfaction -------------------------------------------------------------

def test_dissatisfaction_zero_at_target():
    assert dissatisfaction([10.0, 5.0, 2.0], [10.0, 5.0, 2.0], [1, 1, 1]) == 0.0


def test_dissatisfaction_double_target():
    assert dissatisfaction([2.0], [1.0], [1.0]) == pytest.approx(1.0)


def test_dissatisfaction_weighted():
    # weights (2, 0, 0), slice 1 deviates +50%: 2 * 0.25 = 0.5
    assert dissatisfaction([1.5, 9.0, 9.0], [1.0, 1.0, 1.0], [2.0, 0.0, 0.0]) == pytest.approx(0.5)


def test_dissatisfaction_rejects_zero_target():
    with pytest.raises(ConfigError):
        dissatisfaction([1.0], [0.0], [1.0])


def test_dissatisfaction_nonnegative():
    rng = substream(2, "dis")
    for _ in range(50):
        actual = rng.uniform(0, 10, size=3)
        target = rng.uniform(0.1, 10, size=3)
        assert dissatisfaction(actual, target, [1, 1, 1]) >= 0.0


# ---- solar_action ----------------------------------------------------------------

def test_solar_action_truth_table():
    theta = 700.0
    assert solar_action(Slice.NRTS, 800.0, theta) is SolarAction.ALLOCATE_RENEWABLE
    assert solar_action(Slice.NRTS, 600.0, theta) is SolarAction.DELAY_ALLOCATION
    assert solar_action(Slice.LSS, 0.0, theta) is SolarAction.IMMEDIATE_ALLOCATION
    assert solar_action(Slice.RTS, 10_000.0, theta) is SolarAction.IMMEDIATE_ALLOCATION


def test_solar_action_boundary_delays():
    assert solar_action(Slice.NRTS, 700.0, 700.0) is SolarAction.DELAY_ALLOCATION


def test_solar_action_never_delays_realtime_slices():
    rng = substream(3, "action")
    for _ in range(200):
        slc = Slice(int(rng.integers(0, 2)))  # LSS or RTS
        irr = float(rng.uniform(0, 1500))
        assert solar_action(slc, irr, 700.0) is SolarAction.IMMEDIATE_ALLOCATION


# ---- solar trace -----------------------------------------------------------------

def test_trace_nonnegative_and_dark_at_night():
    trace = SolarTrace(seed=4)
    vals = trace.generate(0.0, 1440)
    assert np.all(vals >= 0.0)
    frac = np.mod((0.0 + 60.0 * np.arange(1440)) / trace.day_length_s, 1.0)
    night = (frac < trace.sunrise_frac) | (frac >= trace.sunset_frac)
    assert np.all(vals[night] == 0.0)


def test_trace_peaks_at_noon():
    trace = SolarTrace(seed=5, cloud_sigma_w_m2=0.0)
    vals = trace.generate(0.0, 1440)
    assert abs(int(np.argmax(vals)) - 720) <= 1
    assert vals.max() == pytest.approx(1000.0, rel=1e-6)


def test_trace_deterministic():
    a = SolarTrace(seed=6).generate(0.0, 500)
    b = SolarTrace(seed=6).generate(0.0, 500)
    assert np.array_equal(a, b)


# ---- ARIMA forecaster ------------------------------------------------------------

def test_forecast_constant_history():
    assert forecast_solar(np.full(100, 500.0), 5).tolist() == [500.0] * 5


def test_forecast_linear_ramp_continues():
    ramp = 50.0 + 3.0 * np.arange(200)
    fc = forecast_solar(ramp, 10)
    expected = ramp[-1] + 3.0 * np.arange(1, 11)
    assert np.max(np.abs(fc - expected) / expected) < 0.01


def test_forecast_requires_history():
    with pytest.raises(ValueError):
        forecast_solar(np.ones(10), 5)


def test_forecast_clamped_nonnegative():
    # Strong downward ramp would extrapolate negative without the clamp.
    hist = np.maximum(0.0, 400.0 - 10.0 * np.arange(100))
    assert np.all(forecast_solar(hist, 30) >= 0.0)


def test_forecast_day_curve_rmse_within_bound():
    # Held-out-trace oracle: hourly raised-cosine day curve with calm AR(1)
    # clouds, ten days of history ending mid-morning, 24 h ahead.
    trace = SolarTrace(
        shape="hann", resolution_s=3600.0, cloud_rho=0.6, cloud_sigma_w_m2=2.0, seed=7
    )
    start = -10 * trace.day_length_s + 9 * 3600.0
    full = trace.generate(start, 10 * 24 + 24)
    hist, truth = full[: 10 * 24], full[10 * 24 :]
    fc = forecast_solar(hist, 24)
    rmse = float(np.sqrt(np.mean((fc - truth) ** 2)))
    assert rmse < 0.15 * trace.peak_w_m2


def test_forecast_day_night_trace_stays_sane():
    # The kinked half-sine day/night curve is not an AR(2) process; the
    # forecaster is only required to stay finite, nonnegative and bounded.
    trace = SolarTrace(resolution_s=3600.0, cloud_sigma_w_m2=2.0, seed=8)
    hist = trace.generate(-5 * trace.day_length_s, 5 * 24)
    fc = forecast_solar(hist, 24)
    assert np.all(np.isfinite(fc))
    assert np.all(fc >= 0.0)
    assert fc.max() < 3 * trace.peak_w_m2


def test_fitted_roots_never_explode():
    rng = substream(9, "roots")
    for trial in range(10):
        noise = rng.normal(0, 50, size=300)
        hist = np.maximum(0.0, 500 + np.cumsum(noise * 0.1))
        fit = fit_arima_212(hist)
        companion = np.array([[fit.phi[0], fit.phi[1]], [1.0, 0.0]])
        assert np.max(np.abs(np.linalg.eigvals(companion))) <= 1.0 + 1e-9
        fc = forecast_arima(fit, 100)
        assert np.all(np.isfinite(fc))


def test_energy_params_validation():
    with pytest.raises(ConfigError):
        EnergyParams(beta_c_w=0.0).validate()
    with pytest.raises(ConfigError):
        EnergyParams(lambda_weight=1.5).validate()
    with pytest.raises(ConfigError):
        EnergyParams(theta_w_m2=-1.0).validate()
    EnergyParams().validate()
