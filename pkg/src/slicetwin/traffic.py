"""Per-slice stochastic traffic models.

Three generators, one per device class:

* mMTC  - bursty: each millisecond draw u ~ Beta(2,5) and emit one 100 B
          packet with probability u;
* eMBB  - constant bit rate 10 Mbps modulated by multiplicative Gaussian
          noise max(0, 1 + N(0, 0.2)), packetized at 1500 B with byte carry;
* URLLC - one 32 B packet every 1 ms plus uniform +-0.1 ms jitter.

Each generator is implemented once, vectorized over devices and over a
configurable window of timesteps (`chunk(...)`); the per-step `step(...)`
and the scalar `TrafficProcess.arrivals` APIs are thin views over the same
arithmetic, so every consumer shares one implementation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError
from .topology import Slice


class TrafficKind(Enum):
    BETA_BURSTY = "beta_bursty"
    GAUSSIAN_CBR = "gaussian_cbr"
    PERIODIC_JITTER = "periodic_jitter"


SLICE_OF_KIND = {
    TrafficKind.BETA_BURSTY: Slice.NRTS,
    TrafficKind.GAUSSIAN_CBR: Slice.RTS,
    TrafficKind.PERIODIC_JITTER: Slice.LSS,
}


@dataclass
class Packet:
    src_device: int
    size_bytes: int
    created_at: float  # ms
    slice: Slice


@dataclass
class TrafficParams:
    """Distribution parameters; defaults follow the simulated traffic mix."""

    beta_a: float = 2.0
    beta_b: float = 5.0
    beta_packet_bytes: int = 100
    cbr_rate_bps: float = 10e6
    cbr_sigma: float = 0.2
    cbr_mtu_bytes: int = 1500
    period_ms: float = 1.0
    jitter_ms: float = 0.1
    periodic_packet_bytes: int = 32

    def validate(self, kind: TrafficKind) -> None:
        if kind is TrafficKind.BETA_BURSTY:
            if self.beta_a <= 0 or self.beta_b <= 0 or self.beta_packet_bytes <= 0:
                raise ConfigError("Beta traffic parameters must be strictly positive")
        elif kind is TrafficKind.GAUSSIAN_CBR:
            if self.cbr_rate_bps <= 0 or self.cbr_sigma < 0 or self.cbr_mtu_bytes <= 0:
                raise ConfigError("CBR traffic parameters must be positive (sigma >= 0)")
        elif kind is TrafficKind.PERIODIC_JITTER:
            if self.period_ms <= 0 or self.periodic_packet_bytes <= 0:
                raise ConfigError("periodic traffic parameters must be strictly positive")
            if not 0 <= self.jitter_ms < self.period_ms / 2:
                raise ConfigError("jitter magnitude must be below period/2")


class _Bank:
    """Shared chunk plumbing: generate K steps of arrivals in one batch."""

    packet_bytes: int

    def step(self, t_ms: float, dt_ms: float, rng: np.random.Generator):
        """Arrivals of a single step as (device_index, sizes, created_ms)."""
        steps, idx, created = self.chunk(t_ms, 1, dt_ms, rng)
        sizes = np.full(idx.size, self.packet_bytes, dtype=np.int64)
        return idx, sizes, created

    def chunk(self, t0_ms: float, n_steps: int, dt_ms: float, rng: np.random.Generator):
        """Arrivals of n_steps steps as (step_offset, device_index, created_ms),
        ordered by step then model-internal emission order."""
        raise NotImplementedError


class BetaBank(_Bank):
    """Vectorized bursty mMTC source: Bernoulli(u), u ~ Beta(a, b), per ms."""

    def __init__(self, n: int, params: TrafficParams):
        params.validate(TrafficKind.BETA_BURSTY)
        self.n = n
        self.p = params
        self.packet_bytes = params.beta_packet_bytes

    def chunk(self, t0_ms, n_steps, dt_ms, rng):
        if self.n == 0:
            z = np.zeros(0)
            return z.astype(np.int64), z.astype(np.int64), z
        u = rng.beta(self.p.beta_a, self.p.beta_b, size=(n_steps, self.n))
        emit = rng.random((n_steps, self.n)) < u
        steps, idx = np.nonzero(emit)
        created = t0_ms + steps * dt_ms
        return steps, idx, created

    def draw(self, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        return rng.beta(self.p.beta_a, self.p.beta_b, size=n_samples)

    def mean_rate_bps(self) -> float:
        a, b = self.p.beta_a, self.p.beta_b
        return a / (a + b) * self.p.beta_packet_bytes * 8 * 1000.0


class CbrBank(_Bank):
    """Vectorized eMBB source: noisy byte stream packetized at the MTU."""

    def __init__(self, n: int, params: TrafficParams):
        params.validate(TrafficKind.GAUSSIAN_CBR)
        self.n = n
        self.p = params
        self.packet_bytes = params.cbr_mtu_bytes
        self.carry_bytes = np.zeros(n, dtype=float)

    def chunk(self, t0_ms, n_steps, dt_ms, rng):
        if self.n == 0:
            z = np.zeros(0)
            return z.astype(np.int64), z.astype(np.int64), z
        if self.p.cbr_sigma > 0:
            factor = np.maximum(
                0.0, 1.0 + rng.normal(0.0, self.p.cbr_sigma, size=(n_steps, self.n))
            )
        else:
            factor = np.ones((n_steps, self.n))
        bytes_in = self.p.cbr_rate_bps / 8.0 * (dt_ms / 1000.0) * factor
        level = self.carry_bytes + np.cumsum(bytes_in, axis=0)
        whole = np.floor(level / self.p.cbr_mtu_bytes).astype(np.int64)
        pkts = np.diff(np.vstack([np.floor(self.carry_bytes / self.p.cbr_mtu_bytes).astype(np.int64)[None, :], whole]), axis=0)
        self.carry_bytes = level[-1] - whole[-1] * self.p.cbr_mtu_bytes
        flat = pkts.ravel()
        rows = np.nonzero(flat)[0]
        reps = flat[rows]
        cells = np.repeat(rows, reps)
        steps = cells // self.n
        idx = cells - steps * self.n
        created = t0_ms + steps * dt_ms
        return steps, idx, created

    def draw(self, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        if self.p.cbr_sigma == 0:
            return np.ones(n_samples)
        return np.maximum(0.0, 1.0 + rng.normal(0.0, self.p.cbr_sigma, size=n_samples))

    def mean_rate_bps(self) -> float:
        return self.p.cbr_rate_bps


class PeriodicBank(_Bank):
    """Vectorized URLLC source: next instant = last + period + U(-j, +j)."""

    def __init__(self, n: int, params: TrafficParams, phase_ms: np.ndarray | None = None):
        params.validate(TrafficKind.PERIODIC_JITTER)
        self.n = n
        self.p = params
        self.packet_bytes = params.periodic_packet_bytes
        if phase_ms is None:
            phase_ms = np.zeros(n)
        self.next_ms = np.asarray(phase_ms, dtype=float).copy()

    def chunk(self, t0_ms, n_steps, dt_ms, rng):
        if self.n == 0:
            z = np.zeros(0)
            return z.astype(np.int64), z.astype(np.int64), z
        t_end = t0_ms + n_steps * dt_ms
        window = t_end - float(self.next_ms.min())
        min_gap = self.p.period_ms - self.p.jitter_ms
        draws = max(1, int(np.ceil(max(window, 0.0) / min_gap)) + 2)
        jitter = rng.uniform(-self.p.jitter_ms, self.p.jitter_ms, size=(draws, self.n))
        # Instants: I_0 = next, I_m = next + m * period + sum of the first m jitters.
        offsets = np.vstack([np.zeros((1, self.n)), np.cumsum(jitter, axis=0)])
        instants = self.next_ms[None, :] + self.p.period_ms * np.arange(draws + 1)[:, None] + offsets
        emit = instants < t_end
        counts = emit.sum(axis=0)
        self.next_ms = instants[counts, np.arange(self.n)]
        rows, idx = np.nonzero(emit)
        created = instants[rows, idx]
        steps = np.floor((created - t0_ms) / dt_ms).astype(np.int64)
        np.clip(steps, 0, n_steps - 1, out=steps)
        order = np.lexsort((idx, created, steps))
        return steps[order], idx[order], created[order]

    def draw(self, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-self.p.jitter_ms, self.p.jitter_ms, size=n_samples)

    def mean_rate_bps(self) -> float:
        return self.p.periodic_packet_bytes * 8 / (self.p.period_ms / 1000.0)


def make_bank(kind: TrafficKind, n: int, params: TrafficParams, phase_ms=None) -> _Bank:
    if kind is TrafficKind.PERIODIC_JITTER:
        return PeriodicBank(n, params, phase_ms)
    if kind is TrafficKind.BETA_BURSTY:
        return BetaBank(n, params)
    return CbrBank(n, params)


@dataclass
class TrafficProcess:
    """Single-device view over the vectorized banks (n = 1)."""

    kind: TrafficKind
    params: TrafficParams = field(default_factory=TrafficParams)
    phase_ms: float = 0.0
    device_id: int = 0

    def __post_init__(self):
        self.params.validate(self.kind)
        phase = np.array([self.phase_ms]) if self.kind is TrafficKind.PERIODIC_JITTER else None
        self._bank = make_bank(self.kind, 1, self.params, phase)

    @property
    def carry_bytes(self) -> float:
        """Unsent byte remainder of the CBR packetizer (0 for other kinds)."""
        if isinstance(self._bank, CbrBank):
            return float(self._bank.carry_bytes[0])
        return 0.0

    def arrivals(self, t_ms: float, rng: np.random.Generator, dt_ms: float = 1.0) -> list[Packet]:
        idx, sizes, created = self._bank.step(t_ms, dt_ms, rng)
        slc = SLICE_OF_KIND[self.kind]
        return [
            Packet(src_device=self.device_id, size_bytes=int(s), created_at=float(c), slice=slc)
            for s, c in zip(sizes, created)
        ]


def arrivals(proc: TrafficProcess, t_ms: float, rng: np.random.Generator, dt_ms: float = 1.0) -> list[Packet]:
    """Packets this process emits during [t_ms, t_ms + dt_ms)."""
    return proc.arrivals(t_ms, rng, dt_ms)


def moment_check(proc: TrafficProcess, n_samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """Empirical (mean, variance) of the process's underlying random draw."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    samples = proc._bank.draw(n_samples, rng)
    return float(np.mean(samples)), float(np.var(samples))
