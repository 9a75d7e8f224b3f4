"""Discrete-event simulation loop binding all subsystems.

One run advances 1 ms fluid-queue timesteps: generate traffic, sync twins at
priority-dependent intervals, re-schedule on refreshed demands, drain queues
at allocated rates (per-packet latency from queue position at admission),
split energy into grid and renewable, run federated rounds, inject and verify
attacks. The report is a pure function of (scenario, seed); the wall-clock
scheduler-overhead diagnostic is kept out of the canonical serialization.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import cybertwin, scheduler, security, traffic
from .energy import EnergyParams, SolarAction, SolarTrace, forecast_solar, solar_action, step_energy
from .errors import AggregationError, ConfigError, InvariantViolation
from .federated import FederatedSystem, FlClient, rounds_to_accuracy
from .scheduler import (
    GnbView,
    Provenance,
    RequestMetadata,
    SliceRequest,
    hrass_allocate,
    objective,
    static_allocate,
)
from .security import AttackEvent, AttackKind, PufIdentity, SecurityAgent, VerifyDecision
from .streams import substream
from .topology import SLICE_OF_CLASS, DeviceClass, NetworkConfig, Slice, build_topology
from .traffic import TrafficParams

POLICIES = ("hybrid", "static", "hrass", "fedavg-hybrid")

RES_CPU, RES_RAM, RES_BW = 0, 1, 2
SLICE_NAMES = ("LSS", "RTS", "NRTS")

_CLASS_PRIORITY = {
    DeviceClass.MMTC: cybertwin.Priority.LOW,
    DeviceClass.EMBB: cybertwin.Priority.NORMAL,
    DeviceClass.URLLC: cybertwin.Priority.HIGH,
}


@dataclass
class FeatureFlags:
    compression: bool = True  # twin + FL update compression
    solar: bool = True  # panels present; hybrid policies also act on forecasts
    security: bool = True  # PUF verification of every request


@dataclass
class SimParams:
    """Engine cadences and invented modeling constants (all config-exposed)."""

    twin_sync_ms: tuple[float, float, float] = (5000.0, 1000.0, 100.0)  # LOW, NORMAL, HIGH
    twin_dim: int = 1000
    chunk_steps: int = 16  # timesteps simulated per vectorized batch
    fl_round_s: float = 10.0
    fl_clients: int = 10
    fl_epochs: int = 20
    request_refresh_s: float = 1.0
    spectral_eff_bps_hz: float = 1.0
    quarantine_s: float = 60.0
    demand_margin: float = 2.0  # provisioning headroom over the measured rate
    cpu_demand_cores: tuple[float, float, float] = (0.001, 0.01, 0.002)  # mMTC, eMBB, URLLC
    ram_demand_gb: tuple[float, float, float] = (0.002, 0.02, 0.004)
    puf_sigma_noise: float = 0.05
    reservoir_cap: int = 1_000_000
    centralized_policy: str = "heuristic"  # heuristic | learned


@dataclass
class Scenario:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    policy: str = "hybrid"
    duration_s: float = 3600.0
    timestep_ms: float = 1.0
    replications: int = 10
    master_seed: int = 42
    attack: security.AttackScenario = field(default_factory=security.AttackScenario)
    energy: EnergyParams = field(default_factory=EnergyParams)
    solar: SolarTrace = field(default_factory=SolarTrace)
    flags: FeatureFlags = field(default_factory=FeatureFlags)
    latency_bounds_ms: tuple[float, float, float] = (1.0, 10.0, 100.0)  # LSS, RTS, NRTS
    sim: SimParams = field(default_factory=SimParams)
    traffic_params: TrafficParams = field(default_factory=TrafficParams)

    def validate(self) -> None:
        self.network.validate()
        self.energy.validate()
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; valid: {', '.join(POLICIES)}")
        if self.timestep_ms <= 0:
            raise ConfigError("timestep_ms must be positive")
        if self.duration_s < 0:
            raise ConfigError("duration_s must be nonnegative")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if any(b <= 0 for b in self.latency_bounds_ms):
            raise ConfigError("latency bounds must be positive")
        if self.sim.centralized_policy not in ("heuristic", "learned"):
            raise ConfigError("centralized_policy must be 'heuristic' or 'learned'")


def percentile(samples, p: float):
    """Nearest-rank percentile: the ceil(p/100 * n)-th order statistic."""
    samples = np.asarray(samples)
    if samples.size == 0:
        return None
    if not 0 < p <= 100:
        raise ValueError("p must lie in (0, 100]")
    k = max(1, math.ceil(p / 100.0 * samples.size))
    return float(np.partition(samples, k - 1)[k - 1])


def sla_compliance(samples, bound: float):
    """Fraction of samples at or below the bound; None for no samples."""
    samples = np.asarray(samples)
    if samples.size == 0:
        return None
    return float(np.mean(samples <= bound))


class Reservoir:
    """Uniform sample of a latency stream (Algorithm R, batch-vectorized)."""

    def __init__(self, cap: int, rng: np.random.Generator):
        self.cap = cap
        self.rng = rng
        self.buf = np.empty(cap)
        self.seen = 0
        self.filled = 0

    def add(self, values: np.ndarray) -> None:
        k = values.size
        if k == 0:
            return
        take = min(self.cap - self.filled, k)
        if take:
            self.buf[self.filled : self.filled + take] = values[:take]
            self.filled += take
            self.seen += take
            values = values[take:]
            k -= take
        if k:
            ranks = self.seen + 1 + np.arange(k)
            accept = np.nonzero(self.rng.random(k) < self.cap / ranks)[0]
            if accept.size:
                self.buf[self.rng.integers(0, self.cap, size=accept.size)] = values[accept]
            self.seen += k

    def samples(self) -> np.ndarray:
        return self.buf[: self.filled]


@dataclass
class MetricsReport:
    policy: str
    seed: int
    duration_s: float
    n_devices: int
    n_gnbs: int
    latency: dict
    sla: dict
    bytes_offered: dict
    bytes_served: dict
    bytes_dropped: dict
    energy_totals: dict
    energy_slices: dict
    utilization: dict
    alloc_share: dict  # slice name -> {cpu, ram, bw} time-averaged allocated fraction
    twin_bytes: int
    twin_bytes_raw: int
    fl_bytes: int
    fl_accuracy: list
    fl_rounds: int
    fl_rounds_to_95: int | None
    security_metrics: dict
    objective_value: float
    sla_violation_events: int
    series: dict
    scheduler_overhead: float = 0.0  # wall-clock diagnostic, not canonical

    def to_rows(self) -> list[tuple[str, str, float]]:
        """Canonical (metric, slice, value) rows; a pure function of the run."""
        rows: list[tuple[str, str, float]] = []
        for s in SLICE_NAMES:
            lat = self.latency[s]
            for key in ("count", "mean_ms", "p50_ms", "p99_ms", "max_ms"):
                rows.append((f"latency_{key}", s, lat[key]))
            rows.append(("sla_compliance", s, self.sla[s]))
            rows.append(("bytes_offered", s, self.bytes_offered[s]))
            rows.append(("bytes_served", s, self.bytes_served[s]))
            rows.append(("bytes_dropped", s, self.bytes_dropped[s]))
            es = self.energy_slices[s]
            for key in ("demand_j", "grid_j", "renewable_j"):
                rows.append((f"energy_{key}", s, es[key]))
            for key in ("cpu", "ram", "bw"):
                rows.append((f"alloc_share_{key}", s, self.alloc_share[s][key]))
        for key in ("demand_j", "grid_j", "renewable_j"):
            rows.append((f"energy_total_{key}", "", self.energy_totals[key]))
        for key in ("cpu", "ram", "bw"):
            rows.append((f"utilization_{key}", "", self.utilization[key]))
        rows.append(("twin_sync_bytes", "", self.twin_bytes))
        rows.append(("twin_sync_bytes_raw", "", self.twin_bytes_raw))
        rows.append(("fl_bytes", "", self.fl_bytes))
        rows.append(("fl_rounds", "", self.fl_rounds))
        rows.append(
            ("fl_rounds_to_95", "", -1 if self.fl_rounds_to_95 is None else self.fl_rounds_to_95)
        )
        sec = self.security_metrics
        rows.append(("security_accuracy", "", sec["accuracy"]))
        rows.append(("security_decisions", "", sec["decisions"]))
        rows.append(("security_attack_events", "", sec["attack_events"]))
        rows.append(("security_mean_response_s", "", sec["mean_response_s"]))
        for kind in ("byzantine", "impersonation", "resource_exhaustion"):
            rate = sec["per_attack"].get(kind)
            if rate is not None:
                rows.append((f"detection_rate_{kind}", "", rate))
        rows.append(("objective", "", self.objective_value))
        rows.append(("sla_violation_events", "", self.sla_violation_events))
        return [(m, s, float("nan") if v is None else float(v)) for m, s, v in rows]


class _NrtsPolicy:
    """Federated-prediction NRTS allocator handed to scheduler.schedule."""

    def __init__(self, run: "_Run"):
        self.run = run
        self.centralized = run.centralized_net

    def nrts_allocate(self, request: SliceRequest, view: GnbView) -> np.ndarray:
        return self.run._nrts_grants(request, view)


class _SecurityShim:
    """Adapts SecurityAgent.verify to the scheduler's verify(request) hook."""

    def __init__(self, run: "_Run"):
        self.run = run

    def verify(self, request: SliceRequest) -> bool:
        return self.run._verify_request(request)


class _Run:
    def __init__(self, scenario: Scenario, seed: int):
        scenario.validate()
        self.sc = scenario
        self.seed = seed
        net = replace(scenario.network, rng_seed=seed)
        self.devices, self.gnbs = build_topology(net)
        self.nd = len(self.devices)
        self.M = len(self.gnbs)
        self.dt_ms = scenario.timestep_ms
        self.dt_s = self.dt_ms / 1000.0
        self.n_steps = int(round(scenario.duration_s * 1000.0 / self.dt_ms))
        self.sim = scenario.sim
        self.sched_time = 0.0

        self.cls = np.array([int(d.cls) for d in self.devices], dtype=np.int64)
        self.slc = np.array([int(d.slice) for d in self.devices], dtype=np.int64)
        self.home = np.array([d.home_gnb for d in self.devices], dtype=np.int64)
        self.capacity = (
            np.array([g.capacity for g in self.gnbs]) if self.M else np.zeros((0, 3))
        )

        # Adversary selection (seeded, capped by the threat model).
        adv = security.choose_compromised(
            self.nd, scenario.attack.adversary_fraction, substream(seed, "adversary")
        )
        self.compromised = np.zeros(self.nd, dtype=bool)
        self.compromised[adv] = True
        for i in adv:
            self.devices[int(i)].honest = False

        # Traffic banks (one stream per class).
        tp = scenario.traffic_params
        self.idx_of_class = {c: np.nonzero(self.cls == int(c))[0] for c in DeviceClass}
        urllc_n = self.idx_of_class[DeviceClass.URLLC].size
        phase_rng = substream(seed, "traffic", "phase")
        self.banks = {
            DeviceClass.MMTC: traffic.make_bank(
                traffic.TrafficKind.BETA_BURSTY, self.idx_of_class[DeviceClass.MMTC].size, tp
            ),
            DeviceClass.EMBB: traffic.make_bank(
                traffic.TrafficKind.GAUSSIAN_CBR, self.idx_of_class[DeviceClass.EMBB].size, tp
            ),
            DeviceClass.URLLC: traffic.make_bank(
                traffic.TrafficKind.PERIODIC_JITTER,
                urllc_n,
                tp,
                phase_ms=phase_rng.uniform(0.0, tp.period_ms, size=urllc_n),
            ),
        }
        self.traffic_rng = {c: substream(seed, "traffic", c.name) for c in DeviceClass}
        self.packet_bytes = {
            DeviceClass.MMTC: tp.beta_packet_bytes,
            DeviceClass.EMBB: tp.cbr_mtu_bytes,
            DeviceClass.URLLC: tp.periodic_packet_bytes,
        }
        self.meta_period_ms = {
            DeviceClass.MMTC: 1000.0 / max(1e-9, self.banks[DeviceClass.MMTC].mean_rate_bps() / (tp.beta_packet_bytes * 8)),
            DeviceClass.EMBB: tp.cbr_mtu_bytes * 8 * 1000.0 / tp.cbr_rate_bps,
            DeviceClass.URLLC: tp.period_ms,
        }

        # Queues and allocations.
        self.backlog = np.zeros((self.M, 3))
        self.alloc = np.zeros((self.M, 3, 3))
        self.bytes_offered = np.zeros(3)
        self.bytes_served = np.zeros(3)
        self.bytes_dropped = np.zeros(3)
        self.sla_violation_events = 0
        self._chunk_busy = np.zeros((1, self.M, 3))

        # Demand bookkeeping.
        self.class_rate_bps = np.array(
            [self.banks[DeviceClass(c)].mean_rate_bps() for c in range(3)]
        )
        self.dev_rate = self.class_rate_bps[self.cls] if self.nd else np.zeros(0)
        self.dev_window_bytes = np.zeros(self.nd)
        self.dev_demand = np.zeros((self.nd, 3))
        self.demand_gnb = np.zeros((self.M, 3, 3))
        self.offered_cpu_gnb = np.zeros((self.M, 3))
        self.n_nrts_active = np.zeros(self.M, dtype=np.int64)
        self.quarantined_until = np.full(self.nd, -np.inf)
        self.demand_active = np.ones(self.nd, dtype=bool)
        for i in range(self.nd):
            self.dev_demand[i] = self._device_demand(i, 0.0)
        self._rebuild_demand_aggregate()

        # Security agent and attack log.
        self.identities = {
            d.id: PufIdentity(d.puf_key, sigma_noise=self.sim.puf_sigma_noise)
            for d in self.devices
        }
        self.agent = (
            SecurityAgent(
                self.identities,
                substream(seed, "security"),
                quarantine_s=self.sim.quarantine_s,
            )
            if scenario.flags.security and self.nd
            else None
        )
        self.attack_events: list[AttackEvent] = []

        # Twin sync cadence and per-sync byte costs.
        if self.nd:
            intervals = np.array(
                [self.sim.twin_sync_ms[int(_CLASS_PRIORITY[DeviceClass(int(c))])] for c in self.cls]
            )
            self.twin_next_ms = (np.arange(self.nd) * 7.0) % intervals
            self.twin_interval_ms = intervals
        else:
            self.twin_next_ms = np.zeros(0)
            self.twin_interval_ms = np.zeros(0)
        comp = scenario.flags.compression
        self.sync_cost_by_class = np.array(
            [
                cybertwin.sync_cost(self.sim.twin_dim, _CLASS_PRIORITY[DeviceClass(c)], comp)
                for c in range(3)
            ],
            dtype=np.int64,
        )
        self.sync_cost_raw_by_class = np.array(
            [
                cybertwin.sync_cost(self.sim.twin_dim, _CLASS_PRIORITY[DeviceClass(c)], False)
                for c in range(3)
            ],
            dtype=np.int64,
        )
        self.twin_bytes = 0
        self.twin_bytes_raw = 0

        # Request cadence: every device attaches (requests) at t = 0, then
        # refreshes on a staggered per-device phase.
        self.refresh_ms = self.sim.request_refresh_s * 1000.0
        self.req_phase_ms = (
            (np.arange(self.nd) * 13.0) % self.refresh_ms if self.nd else np.zeros(0)
        )
        self.req_next_ms = np.zeros(self.nd)

        # Centralized policy (heuristic closed form unless a learned net passes its gate).
        self.centralized_net = None
        if self.sim.centralized_policy == "learned" and self.M:
            net_policy, _err, enabled = scheduler.train_centralized_policy(
                self.capacity[0], substream(seed, "policy-train")
            )
            if enabled:
                self.centralized_net = net_policy
        self.nrts_policy = _NrtsPolicy(self)
        self.security_shim = _SecurityShim(self) if self.agent is not None else None

        # Federated system (hybrid paths only).
        self.fl: FederatedSystem | None = None
        if scenario.policy in ("hybrid", "fedavg-hybrid"):
            self.fl = FederatedSystem(
                n_in=4,
                aggregator="krum" if scenario.policy == "hybrid" else "fedavg",
                participation="topk_fresh" if scenario.policy == "hybrid" else "first_k",
                k_participants=self.sim.fl_clients,
                compress_updates=scenario.flags.compression,
                seed=seed,
                epochs=self.sim.fl_epochs,
            )
        self.fl_windows: dict[int, list[float]] = {
            int(i): [] for i in self.idx_of_class[DeviceClass.MMTC]
        }
        self.dev_fl_bytes = np.zeros(self.nd)
        self.fl_freshness = np.zeros(self.nd)
        self.global_windows: list[float] = []
        self.rate_ref_bps = 2.0 * self.class_rate_bps[int(DeviceClass.MMTC)]

        # Solar trace and rolling forecast.
        self.solar_on = scenario.flags.solar
        self.trace = replace(scenario.solar, seed=seed)
        self.forecast_step_s = self.trace.day_length_s / 24.0
        self.nrts_delay_since = np.full(self.M, np.nan)
        if self.solar_on:
            self._init_solar()

        # Energy accumulators: per slice (demand, grid, renewable) joules.
        self.energy_slice_j = np.zeros((3, 3))
        self.util_time_sum = np.zeros(3)
        self.alloc_share_sum = np.zeros((3, 3))  # slice x resource, time-integrated
        self._cap_guard = (
            np.where(self.capacity > 0, self.capacity, 1.0)[:, None, :]
            if self.M
            else np.ones((0, 1, 3))
        )
        self._solar_aware = self.solar_on and scenario.policy in ("hybrid", "fedavg-hybrid")

        # Latency reservoirs and per-second series.
        self.reservoirs = [
            Reservoir(self.sim.reservoir_cap, substream(seed, "reservoir", s)) for s in range(3)
        ]
        self.n_seconds = max(1, int(math.ceil(scenario.duration_s)))
        self.series_grid_w = np.zeros(self.n_seconds)
        self.series_renewable_w = np.zeros(self.n_seconds)
        self.series_lat_sum = np.zeros((self.n_seconds, 3))
        self.series_lat_count = np.zeros((self.n_seconds, 3))

        if scenario.policy == "static":
            for g in range(self.M):
                self.alloc[g] = static_allocate(self.capacity[g])

    # ----- demand bookkeeping ------------------------------------------------

    def _device_demand(self, i: int, t_s: float) -> np.ndarray:
        """Requested (cpu, ram, bw MHz); margin on bw, attack inflation applied."""
        c = int(self.cls[i])
        bw_mhz = self.sim.demand_margin * float(self.dev_rate[i]) / (
            1e6 * self.sim.spectral_eff_bps_hz
        )
        demand = np.array(
            [self.sim.cpu_demand_cores[c], self.sim.ram_demand_gb[c], bw_mhz]
        )
        if (
            self.compromised[i]
            and self.sc.attack.active(AttackKind.RESOURCE_EXHAUSTION, t_s)
            and Slice(int(self.slc[i])) == self.sc.attack.target_slice
        ):
            demand = demand * security.DEMAND_INFLATION
        return demand

    def _rebuild_demand_aggregate(self) -> None:
        self.demand_gnb[:] = 0.0
        self.offered_cpu_gnb[:] = 0.0
        self.n_nrts_active[:] = 0
        for i in range(self.nd):
            if not self.demand_active[i]:
                continue
            g, s = int(self.home[i]), int(self.slc[i])
            self.demand_gnb[g, s] += self.dev_demand[i]
            self.offered_cpu_gnb[g, s] += self.sim.cpu_demand_cores[int(self.cls[i])]
            if s == int(Slice.NRTS):
                self.n_nrts_active[g] += 1

    def _retire_demand(self, i: int) -> None:
        if not self.demand_active[i]:
            return
        g, s = int(self.home[i]), int(self.slc[i])
        self.demand_gnb[g, s] -= self.dev_demand[i]
        self.offered_cpu_gnb[g, s] -= self.sim.cpu_demand_cores[int(self.cls[i])]
        if s == int(Slice.NRTS):
            self.n_nrts_active[g] -= 1
        self.demand_active[i] = False

    def _restore_demand(self, i: int) -> None:
        if self.demand_active[i]:
            return
        g, s = int(self.home[i]), int(self.slc[i])
        self.demand_gnb[g, s] += self.dev_demand[i]
        self.offered_cpu_gnb[g, s] += self.sim.cpu_demand_cores[int(self.cls[i])]
        if s == int(Slice.NRTS):
            self.n_nrts_active[g] += 1
        self.demand_active[i] = True

    def _quarantine_id(self, dev_id: int, t_s: float) -> None:
        self._retire_demand(int(dev_id))
        self.quarantined_until[dev_id] = t_s + self.sim.quarantine_s

    # ----- solar -------------------------------------------------------------

    def _init_solar(self) -> None:
        res = self.trace.resolution_s
        preroll_s = 3.0 * self.trace.day_length_s
        self._trace_pre = int(round(preroll_s / res))
        n_run = int(math.ceil(self.sc.duration_s / res)) + 2
        self.trace_vals = self.trace.generate(-preroll_s, self._trace_pre + n_run)
        self._fc_ds = max(1, int(round(self.forecast_step_s / res)))
        self._fc_t0 = None
        self._fc_vals = None

    def irradiance_at(self, t_s: float) -> float:
        if not self.solar_on:
            return 0.0
        idx = self._trace_pre + int(t_s / self.trace.resolution_s)
        return float(self.trace_vals[min(idx, len(self.trace_vals) - 1)])

    def forecast_irradiance(self, t_s: float) -> float:
        """Current value of the rolling 24-step-ahead ARIMA forecast."""
        if not self.solar_on:
            return 0.0
        if self._fc_t0 is None or t_s - self._fc_t0 >= self.forecast_step_s:
            now_idx = self._trace_pre + int(t_s / self.trace.resolution_s)
            hist_idx = np.arange(now_idx % self._fc_ds, now_idx + 1, self._fc_ds)
            hist = self.trace_vals[hist_idx]
            self._fc_vals = forecast_solar(hist, 24)
            self._fc_t0 = t_s
        bucket = min(23, int((t_s - self._fc_t0) / self.forecast_step_s))
        return float(self._fc_vals[bucket])

    # ----- scheduling --------------------------------------------------------

    def _gnb_view(self, g: int) -> GnbView:
        # Demands carry the provisioning margin; divide it back out for the
        # measured per-slice load the latency gate prices in.
        offered_bps = (
            self.demand_gnb[g, :, RES_BW]
            * (1e6 * self.sim.spectral_eff_bps_hz / self.sim.demand_margin)
        )
        return GnbView(
            gnb_id=g,
            capacity=self.capacity[g],
            alloc=self.alloc[g],
            backlog_bytes=self.backlog[g],
            demand=self.demand_gnb[g],
            spectral_eff=self.sim.spectral_eff_bps_hz,
            offered_bps=offered_bps,
            horizon_s=self.sim.request_refresh_s,
        )

    def _nrts_grants(self, request: SliceRequest, view: GnbView) -> np.ndarray:
        """HRASS+ NRTS allocation: federated demand prediction sized to free
        capacity, deferred while forecast irradiance stays at or below theta."""
        g = view.gnb_id
        t_s = request.arrival_ms / 1000.0
        grants = view.alloc.copy()
        want = view.demand[Slice.NRTS].copy()

        if self.fl is not None and self.fl.history and len(self.global_windows) >= 4:
            feats = np.array(self.global_windows[-4:]) / max(self.rate_ref_bps, 1e-9)
            pred_bps = self.fl.predict(feats) * self.rate_ref_bps * self.n_nrts_active[g]
            measured = view.demand[Slice.NRTS, RES_BW]
            if measured > 0:
                pred_mhz = (
                    self.sim.demand_margin * pred_bps / (1e6 * self.sim.spectral_eff_bps_hz)
                )
                want[RES_BW] = float(np.clip(pred_mhz, 0.25 * measured, 4.0 * measured))

        if self.solar_on:
            action = solar_action(
                Slice.NRTS, self.forecast_irradiance(t_s), self.sc.energy.theta_w_m2
            )
            if action is SolarAction.ALLOCATE_RENEWABLE:
                self.nrts_delay_since[g] = np.nan
            else:  # DelayAllocation, bounded by the max-delay budget
                since = self.nrts_delay_since[g]
                if np.isnan(since):
                    self.nrts_delay_since[g] = t_s
                    since = t_s
                if t_s - since < self.sc.energy.max_delay_s:
                    grants[Slice.NRTS] = 0.0
                    return grants
                if self.backlog[g, Slice.NRTS] <= 0.0:
                    # budget spent and backlog drained: start a new deferral cycle
                    self.nrts_delay_since[g] = t_s
                    grants[Slice.NRTS] = 0.0
                    return grants
                # forced grant: keep serving until the deferred backlog clears

        free = view.capacity - grants.sum(axis=0) + grants[Slice.NRTS]
        grants[Slice.NRTS] = np.minimum(want, np.maximum(free, 0.0))
        return grants

    def _verify_request(self, request: SliceRequest) -> bool:
        i = request.device_id
        claimed = int(request.claimed_id)
        t_s = request.arrival_ms / 1000.0
        kind = None
        if claimed != i:
            kind = AttackKind.IMPERSONATION
        elif (
            self.compromised[i]
            and self.sc.attack.active(AttackKind.RESOURCE_EXHAUSTION, t_s)
            and Slice(int(self.slc[i])) == self.sc.attack.target_slice
        ):
            kind = AttackKind.RESOURCE_EXHAUSTION
        baseline_bw = (
            self.sim.demand_margin
            * self.class_rate_bps[int(self.cls[claimed])]
            / (1e6 * self.sim.spectral_eff_bps_hz)
        )
        ok = self.agent.verify(
            claimed,
            self.identities[i],
            t_s,
            demand_bw=float(request.demand[RES_BW]),
            baseline_bw=baseline_bw,
            is_attack=kind is not None,
            attack_kind=kind,
        )
        if not ok:
            self._quarantine_id(claimed, t_s)
        return ok

    def _process_requests(self, t0_ms: float, t_end_ms: float) -> None:
        """Fire every request event scheduled inside [t0_ms, t_end_ms)."""
        if not self.nd:
            return
        due = np.nonzero(self.req_next_ms < t_end_ms)[0]
        if due.size == 0:
            return
        started = time.perf_counter()
        order = np.lexsort((due, self.req_next_ms[due]))
        for i in due[order]:
            i = int(i)
            t_ms = float(self.req_next_ms[i])
            t_s = t_ms / 1000.0
            if t_ms == 0:
                phase = self.req_phase_ms[i]
                self.req_next_ms[i] = phase if phase > 0 else self.refresh_ms
            else:
                self.req_next_ms[i] += self.refresh_ms
            # Refresh the measured-rate EWMA from the last window's bytes.
            if t_ms > 0:
                window_rate = self.dev_window_bytes[i] * 8.0 / self.sim.request_refresh_s
                self.dev_rate[i] = 0.5 * self.dev_rate[i] + 0.5 * window_rate
                self.dev_window_bytes[i] = 0.0
            if self.quarantined_until[i] > t_s:
                continue
            self._retire_demand(i)
            self.dev_demand[i] = self._device_demand(i, t_s)
            self._restore_demand(i)

            claimed = i
            if self.compromised[i] and self.sc.attack.active(AttackKind.IMPERSONATION, t_s):
                claimed = security.impersonation_victim(i, self.nd)
                self.attack_events.append(
                    AttackEvent(AttackKind.IMPERSONATION, attacker=i, t_s=t_s, victim=claimed)
                )
            elif (
                self.compromised[i]
                and self.sc.attack.active(AttackKind.RESOURCE_EXHAUSTION, t_s)
                and Slice(int(self.slc[i])) == self.sc.attack.target_slice
            ):
                self.attack_events.append(
                    AttackEvent(
                        AttackKind.RESOURCE_EXHAUSTION,
                        attacker=i,
                        t_s=t_s,
                        slice=self.sc.attack.target_slice,
                    )
                )
            if self.agent is not None and self.agent.is_quarantined(claimed, t_s):
                continue

            c = DeviceClass(int(self.cls[i]))
            request = SliceRequest(
                device_id=i,
                gnb_id=int(self.home[i]),
                metadata=RequestMetadata(
                    packet_size_bytes=self.packet_bytes[c],
                    mean_interarrival_ms=self.meta_period_ms[c],
                    rate_bps=float(self.dev_rate[i]),
                    declared=Slice(int(self.slc[i])),
                ),
                demand=self.dev_demand[i],
                arrival_ms=t_ms,
                claimed_id=claimed,
            )
            g = int(self.home[i])
            view = self._gnb_view(g)
            if self.sc.policy in ("hybrid", "fedavg-hybrid"):
                allocation = scheduler.schedule(
                    request, view, self.nrts_policy, self.security_shim
                )
                if allocation.provenance is not Provenance.QUARANTINE:
                    self.alloc[g] = allocation.grants
                if allocation.exhausted:
                    self.sla_violation_events += 1
            elif self.sc.policy == "hrass":
                ok = True
                if self.security_shim is not None:
                    ok = self.security_shim.verify(request)
                if ok:
                    self.alloc[g] = hrass_allocate(view)
            else:  # static: fixed partitioning, verification still runs
                if self.security_shim is not None:
                    self.security_shim.verify(request)
        self.sched_time += time.perf_counter() - started

    # ----- traffic / queues ----------------------------------------------------

    def _chunk_traffic(self, t0_ms: float, k_steps: int) -> None:
        """Generate arrivals for k_steps steps and evolve every fluid queue.

        Allocations are constant across the chunk, so the per-step backlog
        recursion B_k = max(0, B_{k-1} + A_k - D) has the closed form
        B_k = max(B_0 + S_k, S_k - min_{m<=k} S_m) with S the cumulative sum
        of A - D; per-packet latency reads the pre-step backlog plus the
        packet's within-step queue position.
        """
        t0_s = t0_ms / 1000.0
        cap_lat_s = self.sc.duration_s
        step_parts, dev_parts, size_parts = [], [], []
        for c in DeviceClass:
            class_idx = self.idx_of_class[c]
            if class_idx.size == 0:
                continue
            steps, local_idx, _created = self.banks[c].chunk(
                t0_ms, k_steps, self.dt_ms, self.traffic_rng[c]
            )
            if local_idx.size == 0:
                continue
            size = float(self.banks[c].packet_bytes)
            self.bytes_offered[int(SLICE_OF_CLASS[c])] += size * local_idx.size
            step_parts.append(steps)
            dev_parts.append(class_idx[local_idx])
            size_parts.append(np.full(local_idx.size, size))

        nq = self.M * 3
        if nq == 0:
            return
        if dev_parts:
            steps_p = np.concatenate(step_parts)
            dev_ids = np.concatenate(dev_parts)
            sizes_f = np.concatenate(size_parts)

            per_dev = np.bincount(dev_ids, weights=sizes_f, minlength=self.nd)
            self.dev_window_bytes += per_dev
            self.dev_fl_bytes += per_dev
            self.fl_freshness[dev_ids] = t0_s

            live = self.quarantined_until[dev_ids] <= t0_s
            if not live.all():
                dead = ~live
                np.add.at(self.bytes_dropped, self.slc[dev_ids[dead]], sizes_f[dead])
                steps_p = steps_p[live]
                dev_ids = dev_ids[live]
                sizes_f = sizes_f[live]
        else:
            steps_p = np.zeros(0, dtype=np.int64)
            dev_ids = np.zeros(0, dtype=np.int64)
            sizes_f = np.zeros(0)

        # Queue key q = gnb * 3 + slice matches the backlog array layout.
        q_p = self.home[dev_ids] * 3 + self.slc[dev_ids]
        key2 = steps_p * nq + q_p
        order = np.argsort(key2, kind="stable")
        key2_o = key2[order]
        szs = sizes_f[order]
        steps_o = steps_p[order]
        q_o = q_p[order]

        arrivals = np.bincount(key2_o, weights=szs, minlength=k_steps * nq).reshape(
            k_steps, nq
        )
        rate_flat = (
            self.alloc[:, :, RES_BW].reshape(-1) * (1e6 * self.sim.spectral_eff_bps_hz)
        )
        drain = rate_flat * (self.dt_s / 8.0)  # bytes per step per queue
        b0 = self.backlog.reshape(-1)
        s_cum = np.cumsum(arrivals - drain, axis=0)
        b_series = np.maximum(s_cum + b0, s_cum - np.minimum.accumulate(s_cum, axis=0))
        b_prev = np.vstack([b0[None, :], b_series[:-1]])
        served = b_prev + arrivals - b_series
        self.bytes_served += served.sum(axis=0).reshape(self.M, 3).sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            busy = np.where(
                drain > 0,
                np.minimum(1.0, (b_prev + arrivals) / np.where(drain > 0, drain, 1.0)),
                ((b_prev + arrivals) > 0).astype(float),
            )
        self._chunk_busy = busy.reshape(k_steps, self.M, 3)
        self.backlog = b_series[-1].reshape(self.M, 3).copy()

        if key2_o.size:
            # Within-(step, queue) cumulative bytes: queue position at admission.
            cum = np.cumsum(szs)
            new_group = np.empty(key2_o.size, dtype=bool)
            new_group[0] = True
            np.not_equal(key2_o[1:], key2_o[:-1], out=new_group[1:])
            starts = np.nonzero(new_group)[0]
            base = np.zeros(key2_o.size)
            base[starts[1:]] = cum[starts[1:] - 1]
            within = cum - np.maximum.accumulate(base)

            rate_p = rate_flat[q_o]
            pending_bits = (b_prev[steps_o, q_o] + within) * 8.0
            with np.errstate(divide="ignore", invalid="ignore"):
                lat_s = np.where(rate_p > 0, pending_bits / rate_p, cap_lat_s)
            np.minimum(lat_s, cap_lat_s, out=lat_s)
            lat_ms = lat_s * 1000.0

            slc_o = q_o % 3
            sec_o = np.minimum(
                ((t0_ms + steps_o * self.dt_ms) / 1000.0).astype(np.int64),
                self.n_seconds - 1,
            )
            for s in range(3):
                mask = slc_o == s
                if mask.any():
                    vals = lat_ms[mask]
                    self.reservoirs[s].add(vals)
                    np.add.at(self.series_lat_sum[:, s], sec_o[mask], vals)
                    np.add.at(self.series_lat_count[:, s], sec_o[mask], 1.0)

    # ----- twins ---------------------------------------------------------------

    def _twin_sync_window(self, t0_ms: float, t_end_ms: float) -> None:
        if not self.nd:
            return
        while True:
            due = self.twin_next_ms < t_end_ms
            if not due.any():
                return
            idx = np.nonzero(due)[0]
            self.twin_next_ms[idx] += self.twin_interval_ms[idx]
            classes = self.cls[idx]
            self.twin_bytes += int(self.sync_cost_by_class[classes].sum())
            self.twin_bytes_raw += int(self.sync_cost_raw_by_class[classes].sum())

    # ----- energy ----------------------------------------------------------------

    def _chunk_energy(self, t0_ms: float, k_steps: int) -> None:
        """Per-step energy split over the chunk, vectorized over (step, gNB)."""
        if not self.M:
            return
        p = self.sc.energy
        share = self.alloc / self._cap_guard  # (M, slices, resources), chunk-constant
        act_cpu = np.minimum(
            1.0, self.offered_cpu_gnb / np.maximum(self.alloc[:, :, RES_CPU], 1e-12)
        )
        act_cpu[self.alloc[:, :, RES_CPU] <= 0] = 0.0
        idle = p.idle_draw_fraction
        util_cpu = share[:, :, RES_CPU] * (idle + (1.0 - idle) * act_cpu)  # (M, 3)
        util_bw = share[None, :, :, RES_BW] * (idle + (1.0 - idle) * self._chunk_busy)

        if self.solar_on:
            t_steps = t0_ms / 1000.0 + self.dt_s * np.arange(k_steps)
            irr_idx = np.minimum(
                self._trace_pre + (t_steps / self.trace.resolution_s).astype(np.int64),
                len(self.trace_vals) - 1,
            )
            irr = self.trace_vals[irr_idx]  # (K,)
        else:
            irr = np.zeros(k_steps)

        power_s = p.beta_c_w * util_cpu[None, :, :] + p.beta_b_w * util_bw  # (K, M, 3)
        grid_w, renewable = step_energy(
            np.broadcast_to(util_cpu.sum(axis=1)[None, :], (k_steps, self.M)),
            util_bw.sum(axis=2),
            self.dt_s,
            irr[:, None],
            p,
        )
        demand = grid_w + renewable  # (K, M)
        if not irr.any():
            renew_s = np.zeros_like(power_s)
        elif self._solar_aware:
            # HRASS+ books renewable supply against NRTS first (the
            # AllocateRenewable branch of the action rule).
            renew_s = np.empty_like(power_s)
            renew_nrts = np.minimum(power_s[:, :, Slice.NRTS], renewable)
            renew_s[:, :, Slice.NRTS] = renew_nrts
            other = power_s[:, :, Slice.LSS] + power_s[:, :, Slice.RTS]
            ratio = (renewable - renew_nrts) / np.where(other > 0, other, 1.0)
            ratio[other <= 0] = 0.0
            renew_s[:, :, Slice.LSS] = power_s[:, :, Slice.LSS] * ratio
            renew_s[:, :, Slice.RTS] = power_s[:, :, Slice.RTS] * ratio
        else:
            ratio = renewable / np.where(demand > 0, demand, 1.0)
            ratio[demand <= 0] = 0.0
            renew_s = power_s * ratio[:, :, None]
        grid_s = power_s - renew_s

        err = np.abs(grid_s.sum(axis=2) + renew_s.sum(axis=2) - demand).max()
        if err > 1e-6 * max(1.0, float(demand.max(initial=0.0))):
            raise InvariantViolation(
                f"energy conservation violated in chunk at t={t0_ms} ms (err={err})"
            )

        self.energy_slice_j[:, 0] += power_s.sum(axis=(0, 1)) * self.dt_s
        self.energy_slice_j[:, 1] += grid_s.sum(axis=(0, 1)) * self.dt_s
        self.energy_slice_j[:, 2] += renew_s.sum(axis=(0, 1)) * self.dt_s
        sec_idx = np.minimum((t0_ms / 1000.0 + self.dt_s * np.arange(k_steps)).astype(np.int64), self.n_seconds - 1)
        grid_t = (demand - renewable).sum(axis=1) * self.dt_s
        renew_t = renewable.sum(axis=1) * self.dt_s
        np.add.at(self.series_grid_w, sec_idx, grid_t)
        np.add.at(self.series_renewable_w, sec_idx, renew_t)
        self.util_time_sum += share.sum(axis=1).mean(axis=0) * (self.dt_s * k_steps)
        self.alloc_share_sum += share.mean(axis=0) * (self.dt_s * k_steps)

    # ----- federated rounds -----------------------------------------------------

    def _fl_round(self, t_ms: float, index: int) -> None:
        if self.fl is None:
            return
        t_s = t_ms / 1000.0
        started = time.perf_counter()
        mmtc = self.idx_of_class[DeviceClass.MMTC]
        rates = []
        for i in mmtc:
            i = int(i)
            rate = self.dev_fl_bytes[i] * 8.0 / self.sim.fl_round_s
            self.dev_fl_bytes[i] = 0.0
            hist = self.fl_windows[i]
            hist.append(rate)
            if len(hist) > 8:
                del hist[0]
            rates.append(rate)
        if rates:
            self.global_windows.append(float(np.mean(rates)))
            if len(self.global_windows) > 8:
                del self.global_windows[0]

        byz_active = self.sc.attack.active(AttackKind.BYZANTINE, t_s)
        clients = []
        for i in mmtc:
            i = int(i)
            if self.quarantined_until[i] > t_s:
                continue
            hist = self.fl_windows[i]
            if len(hist) < 5:
                continue
            ref = max(self.rate_ref_bps, 1e-9)
            xs, ys = [], []
            for k in range(len(hist) - 4):
                xs.append([h / ref for h in hist[k : k + 4]])
                ys.append([hist[k + 4] / ref])
            byz = bool(self.compromised[i]) and byz_active
            clients.append(
                FlClient(
                    client_id=i,
                    x=np.array(xs),
                    y=np.array(ys),
                    freshness=float(self.fl_freshness[i]),
                    byzantine=byz,
                )
            )
            if byz:
                self.attack_events.append(AttackEvent(AttackKind.BYZANTINE, attacker=i, t_s=t_s))
        if clients:
            try:
                rnd = self.fl.run_round(clients, index=index)
            except AggregationError:
                rnd = None
            if rnd is not None and self.agent is not None:
                self._screen_byzantine(rnd, clients, t_s)
        self.sched_time += time.perf_counter() - started

    def _screen_byzantine(self, rnd, clients: list[FlClient], t_s: float) -> None:
        """Distance screening: updates far from the aggregate are rejected."""
        by_id = {c.client_id: c for c in clients}
        dists = {
            u.client_id: float(np.linalg.norm(u.delta - rnd.aggregate.delta))
            for u in rnd.updates
        }
        if not dists:
            return
        med = float(np.median(list(dists.values())))
        threshold = 5.0 * max(med, 1e-12)
        for cid, dist in dists.items():
            client = by_id[cid]
            rejected = dist > threshold
            self.agent.decisions.append(
                VerifyDecision(
                    t_s=t_s,
                    claimed_id=cid,
                    rejected=rejected,
                    is_attack=client.byzantine,
                    attack_kind=AttackKind.BYZANTINE if client.byzantine else None,
                )
            )
            if rejected:
                self._quarantine_id(cid, t_s)

    # ----- main loop --------------------------------------------------------------

    def run(self) -> MetricsReport:
        fl_interval_ms = self.sim.fl_round_s * 1000.0
        next_fl_ms = fl_interval_ms
        fl_index = 0
        chunk = max(1, int(self.sim.chunk_steps))
        wall_start = time.perf_counter()
        step = 0
        while step < self.n_steps:
            k = min(chunk, self.n_steps - step)
            t0_ms = step * self.dt_ms
            t_end_ms = (step + k) * self.dt_ms
            self._process_requests(t0_ms, t_end_ms)
            self._twin_sync_window(t0_ms, t_end_ms)
            if self.fl is not None:
                while next_fl_ms < t_end_ms:
                    fl_index += 1
                    self._fl_round(next_fl_ms, fl_index)
                    next_fl_ms += fl_interval_ms
            self._chunk_traffic(t0_ms, k)
            self._chunk_energy(t0_ms, k)
            self._check_capacity(t0_ms)
            step += k
        wall = time.perf_counter() - wall_start
        return self._report(wall)

    def _check_capacity(self, t_ms: float) -> None:
        if not self.M:
            return
        totals = self.alloc.sum(axis=1)
        if np.any(totals > self.capacity + 1e-6) or np.any(self.alloc < -1e-9):
            g = int(np.argmax((totals - self.capacity).max(axis=1)))
            raise InvariantViolation(
                f"capacity violated at t={t_ms} ms on gNB {g}: "
                f"alloc={totals[g]} capacity={self.capacity[g]}"
            )

    # ----- reporting ---------------------------------------------------------------

    def _report(self, wall_s: float) -> MetricsReport:
        latency = {}
        sla = {}
        bounds_ms = self.sc.latency_bounds_ms
        for s, name in enumerate(SLICE_NAMES):
            samples = self.reservoirs[s].samples()
            if samples.size:
                latency[name] = {
                    "count": float(self.reservoirs[s].seen),
                    "mean_ms": float(samples.mean()),
                    "p50_ms": percentile(samples, 50),
                    "p99_ms": percentile(samples, 99),
                    "max_ms": float(samples.max()),
                }
                sla[name] = sla_compliance(samples, bounds_ms[s])
            else:
                latency[name] = {
                    "count": 0.0, "mean_ms": None, "p50_ms": None, "p99_ms": None, "max_ms": None,
                }
                sla[name] = None

        energy_slices = {
            name: {
                "demand_j": float(self.energy_slice_j[s, 0]),
                "grid_j": float(self.energy_slice_j[s, 1]),
                "renewable_j": float(self.energy_slice_j[s, 2]),
            }
            for s, name in enumerate(SLICE_NAMES)
        }
        energy_totals = {
            "demand_j": float(self.energy_slice_j[:, 0].sum()),
            "grid_j": float(self.energy_slice_j[:, 1].sum()),
            "renewable_j": float(self.energy_slice_j[:, 2].sum()),
        }

        duration = max(self.sc.duration_s, 1e-9)
        utilization = {
            "cpu": float(self.util_time_sum[RES_CPU] / duration),
            "ram": float(self.util_time_sum[RES_RAM] / duration),
            "bw": float(self.util_time_sum[RES_BW] / duration),
        }
        alloc_share = {
            name: {
                "cpu": float(self.alloc_share_sum[s, RES_CPU] / duration),
                "ram": float(self.alloc_share_sum[s, RES_RAM] / duration),
                "bw": float(self.alloc_share_sum[s, RES_BW] / duration),
            }
            for s, name in enumerate(SLICE_NAMES)
        }

        if self.agent is not None:
            det = security.detection_metrics(self.attack_events, self.agent.decisions)
            sec = {
                "accuracy": det.accuracy,
                "decisions": len(self.agent.decisions),
                "attack_events": len(self.attack_events),
                "mean_response_s": det.mean_response_time_s,
                "per_attack": det.per_attack_rates,
                "tp": det.tp, "tn": det.tn, "fp": det.fp, "fn": det.fn,
            }
        else:
            sec = {
                "accuracy": 1.0, "decisions": 0, "attack_events": len(self.attack_events),
                "mean_response_s": 0.0, "per_attack": {}, "tp": 0, "tn": 0, "fp": 0, "fn": 0,
            }

        fl_acc = [r.accuracy for r in self.fl.history] if self.fl is not None else []
        fl_bytes = self.fl.bytes_total if self.fl is not None else 0
        fl_to95 = rounds_to_accuracy(fl_acc, 0.95) if fl_acc else None

        # Objective (reported, not optimized): normalized energy vs normalized latency.
        p = self.sc.energy
        e_ref = self.M * (p.beta_c_w + p.beta_b_w) * duration
        e_norm = energy_totals["demand_j"] / e_ref if e_ref > 0 else 0.0
        lat_terms = []
        for s, name in enumerate(SLICE_NAMES):
            mean_ms = latency[name]["mean_ms"]
            if mean_ms is not None:
                lat_terms.append(min(1.0, (mean_ms / 1000.0) / (bounds_ms[s] / 1000.0)))
        l_norm = float(np.mean(lat_terms)) if lat_terms else 0.0
        obj = objective(min(1.0, e_norm), l_norm, p.lambda_weight)

        series = {
            "grid_w": [float(v) for v in self.series_grid_w],
            "renewable_w": [float(v) for v in self.series_renewable_w],
            "fl_accuracy": [float(a) for a in fl_acc],
        }
        for s, name in enumerate(SLICE_NAMES):
            mean = np.where(
                self.series_lat_count[:, s] > 0,
                self.series_lat_sum[:, s] / np.maximum(self.series_lat_count[:, s], 1),
                np.nan,
            )
            series[f"latency_mean_ms_{name}"] = [float(v) for v in mean]

        return MetricsReport(
            policy=self.sc.policy,
            seed=self.seed,
            duration_s=self.sc.duration_s,
            n_devices=self.nd,
            n_gnbs=self.M,
            latency=latency,
            sla=sla,
            bytes_offered={n: float(self.bytes_offered[s]) for s, n in enumerate(SLICE_NAMES)},
            bytes_served={n: float(self.bytes_served[s]) for s, n in enumerate(SLICE_NAMES)},
            bytes_dropped={n: float(self.bytes_dropped[s]) for s, n in enumerate(SLICE_NAMES)},
            energy_totals=energy_totals,
            energy_slices=energy_slices,
            utilization=utilization,
            alloc_share=alloc_share,
            twin_bytes=self.twin_bytes,
            twin_bytes_raw=self.twin_bytes_raw,
            fl_bytes=fl_bytes,
            fl_accuracy=fl_acc,
            fl_rounds=len(fl_acc),
            fl_rounds_to_95=fl_to95,
            security_metrics=sec,
            objective_value=obj,
            sla_violation_events=self.sla_violation_events,
            series=series,
            scheduler_overhead=self.sched_time / max(wall_s, 1e-9),
        )


def run(scenario: Scenario, seed: int | None = None) -> MetricsReport:
    """Execute one replication; identical (scenario, seed) pairs produce
    identical reports."""
    if seed is None:
        seed = scenario.master_seed
    return _Run(scenario, seed).run()


@dataclass
class ReplicationResult:
    reports: list[MetricsReport]
    aggregates: dict  # (metric, slice) -> {mean, std, ci95, n}


def replicate(scenario: Scenario) -> ReplicationResult:
    """Run scenario.replications seeds (master_seed + i) and aggregate every
    canonical metric with mean, sample stddev and the 1.96 s/sqrt(n) CI."""
    reports = [run(scenario, scenario.master_seed + i) for i in range(scenario.replications)]
    values: dict[tuple[str, str], list[float]] = {}
    for rep in reports:
        for metric, slc, value in rep.to_rows():
            values.setdefault((metric, slc), []).append(value)
    aggregates = {}
    for key, vals in values.items():
        arr = np.asarray(vals, dtype=float)
        n = arr.size
        mean = float(np.mean(arr)) if not np.all(np.isnan(arr)) else float("nan")
        std = float(np.std(arr, ddof=1)) if n > 1 else 0.0
        aggregates[key] = {
            "mean": mean,
            "std": std,
            "ci95": 1.96 * std / math.sqrt(n) if n > 0 else 0.0,
            "n": n,
        }
    return ReplicationResult(reports=reports, aggregates=aggregates)


def density_sweep(scenario: Scenario, densities: list[int]) -> list[dict]:
    """Scale total device count along the sweep; one row of LSS p99 (mean
    over replications) per density."""
    if list(densities) != sorted(densities):
        raise ConfigError("densities must be sorted ascending")
    rows = []
    for d in densities:
        sc = replace(scenario, network=replace(scenario.network, n_devices=int(d)))
        result = replicate(sc)
        p99s = [
            rep.latency["LSS"]["p99_ms"]
            for rep in result.reports
            if rep.latency["LSS"]["p99_ms"] is not None
        ]
        rows.append(
            {
                "density": int(d),
                "p99_lss_ms": float(np.mean(p99s)) if p99s else float("nan"),
            }
        )
    return rows
