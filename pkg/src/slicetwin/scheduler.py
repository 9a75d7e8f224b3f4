"""Hybrid slice scheduler and baseline allocation policies.

The hybrid path classifies each request with a shallow decision tree, serves
latency-critical slices (LSS/RTS) from a centralized allocator guarded by a
fluid-queue latency check with priority-preempting fallback, and routes NRTS
through the federated demand predictor. Static partitioning and the greedy
priority baseline sit behind the same per-slice allocation shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError
from .nn import Mlp
from .topology import Slice

RES_CPU, RES_RAM, RES_BW = 0, 1, 2
N_SLICES, N_RESOURCES = 3, 3

# Proportional-fairness weights by slice priority (LSS, RTS, NRTS).
SLICE_WEIGHTS = np.array([3.0, 2.0, 1.0])
# Fixed partitioning baseline: 40% LSS, 35% RTS, 25% NRTS.
STATIC_SPLIT = np.array([0.40, 0.35, 0.25])
# Alg-1 latency gate for centrally scheduled slices, seconds.
ENFORCE_BOUND_S = 1e-3


class Provenance(Enum):
    CENTRALIZED_AI = "centralized_ai"
    FEDERATED_MODEL = "federated_model"
    FALLBACK = "fallback"
    QUARANTINE = "quarantine"
    STATIC_BASELINE = "static_baseline"
    HRASS_BASELINE = "hrass_baseline"


@dataclass
class RequestMetadata:
    packet_size_bytes: float
    mean_interarrival_ms: float
    rate_bps: float
    declared: Slice | None = None


@dataclass
class SliceRequest:
    device_id: int
    gnb_id: int
    metadata: RequestMetadata
    demand: np.ndarray  # (3,) cpu cores, ram GB, bw MHz
    arrival_ms: float = 0.0
    claimed_id: int | None = None  # differs from device_id under impersonation

    def __post_init__(self):
        self.demand = np.asarray(self.demand, dtype=float)
        if np.any(self.demand < 0):
            raise ConfigError("request demands must be nonnegative")
        if self.claimed_id is None:
            self.claimed_id = self.device_id


@dataclass
class GnbView:
    """Scheduler-facing snapshot of one gNodeB."""

    gnb_id: int
    capacity: np.ndarray  # (3,)
    alloc: np.ndarray  # (3 slices, 3 resources)
    backlog_bytes: np.ndarray  # (3,)
    demand: np.ndarray  # (3 slices, 3 resources), margin already applied
    spectral_eff: float = 1.0  # bps per Hz
    offered_bps: np.ndarray | None = None  # (3,) measured per-slice load
    horizon_s: float = 1.0  # scheduling epoch the latency gate looks ahead

    def rate_bps(self, slc: Slice, grants: np.ndarray | None = None) -> float:
        alloc = self.alloc if grants is None else grants
        return float(alloc[slc, RES_BW]) * 1e6 * self.spectral_eff


@dataclass
class Allocation:
    gnb_id: int
    grants: np.ndarray  # (3 slices, 3 resources)
    provenance: Provenance
    exhausted: bool = False  # fallback found nothing to grant

    def __post_init__(self):
        self.grants = np.asarray(self.grants, dtype=float)

    def feasible(self, capacity: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(self.grants >= -tol) and np.all(self.grants.sum(axis=0) <= capacity + tol))


def classify_slice(metadata: RequestMetadata) -> Slice:
    """Shallow decision tree over request metadata; total and deterministic."""
    if metadata.packet_size_bytes <= 64 and abs(metadata.mean_interarrival_ms - 1.0) <= 0.25:
        return Slice.LSS
    if metadata.rate_bps >= 1e6:
        return Slice.RTS
    return Slice.NRTS


def centralized_allocate(view: GnbView, policy: "PolicyNet | None" = None) -> np.ndarray:
    """Weighted proportional-fair split of each resource, capped at demand.

    share_s = w_s * demand_s / sum(w * demand) * capacity, with weights 3/2/1;
    a learned PolicyNet may supply the shares instead of the closed form.
    """
    demand = view.demand
    if policy is not None:
        fractions = policy.fractions(view)
    else:
        weighted = SLICE_WEIGHTS[:, None] * demand
        totals = weighted.sum(axis=0)
        fractions = np.zeros((N_SLICES, N_RESOURCES))
        nz = totals > 0
        fractions[:, nz] = weighted[:, nz] / totals[nz]
    shares = fractions * view.capacity
    return np.minimum(demand, shares)


def static_allocate(capacity) -> np.ndarray:
    """Load-invariant 40/35/25 split of every resource."""
    capacity = np.asarray(capacity, dtype=float)
    return STATIC_SPLIT[:, None] * capacity


def hrass_allocate(view: GnbView) -> np.ndarray:
    """Greedy priority fill (LSS > RTS > NRTS): each slice takes
    min(demand, remaining capacity) per resource. No energy term."""
    remaining = view.capacity.astype(float).copy()
    grants = np.zeros((N_SLICES, N_RESOURCES))
    for slc in (Slice.LSS, Slice.RTS, Slice.NRTS):
        g = np.minimum(view.demand[slc], remaining)
        grants[slc] = g
        remaining -= g
    return grants


def enforce_latency(
    grants: np.ndarray,
    bound_s: float,
    view: GnbView,
    slc: Slice,
    request_bytes: float,
) -> bool:
    """Fluid-queue latency gate: (backlog + request) / service rate <= bound.

    When the view carries a measured per-slice load, any sustained deficit
    (offered above the candidate rate) is priced in over the scheduling
    horizon, so an allocation below the offered rate fails even on a
    momentarily empty queue. Zero rate with pending bytes never divides:
    it simply fails.
    """
    rate_bps = float(grants[slc, RES_BW]) * 1e6 * view.spectral_eff
    pending_bits = (float(view.backlog_bytes[slc]) + float(request_bytes)) * 8.0
    if view.offered_bps is not None:
        deficit_bps = float(view.offered_bps[slc]) - rate_bps
        if deficit_bps > 0:
            pending_bits += deficit_bps * view.horizon_s
    if pending_bits <= 0:
        return True
    if rate_bps <= 0:
        return False
    return pending_bits / rate_bps <= bound_s


def fallback_allocation(request: SliceRequest, view: GnbView, slc: Slice | None = None) -> Allocation:
    """Grant the requesting slice the free capacity up to 2x its demand,
    preempting lower-priority slices (NRTS first) when free space runs out."""
    if slc is None:
        slc = classify_slice(request.metadata)
    grants = view.alloc.copy()
    want = 2.0 * view.demand[slc]
    victims = [s for s in (Slice.NRTS, Slice.RTS, Slice.LSS) if s > slc]

    free = view.capacity - grants.sum(axis=0)
    new_grant = np.minimum(want, np.maximum(free, 0.0) + grants[slc])
    shortfall = want - new_grant
    for victim in victims:
        if np.all(shortfall <= 1e-12):
            break
        take = np.minimum(grants[victim], shortfall)
        grants[victim] -= take
        new_grant += take
        shortfall -= take
    grants[slc] = new_grant
    exhausted = bool(np.all(new_grant <= 1e-12) and np.any(view.demand[slc] > 0))
    return Allocation(view.gnb_id, grants, Provenance.FALLBACK, exhausted=exhausted)


def objective(e_total: float, l_total: float, lam: float) -> float:
    """Reported energy-latency objective lam * E + (1 - lam) * L."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    return lam * e_total + (1.0 - lam) * l_total


class PolicyNet:
    """Learned stand-in for the closed-form fair shares (128 hidden units).

    Trained by supervised regression on (state, heuristic share) pairs; the
    engine only enables it when it reproduces the heuristic within 5%.
    """

    def __init__(self, rng: np.random.Generator, n_hidden: int = 128):
        self.net = Mlp(N_SLICES * N_RESOURCES, n_hidden, N_SLICES * N_RESOURCES, rng)

    @staticmethod
    def _features(view: GnbView) -> np.ndarray:
        # Log-demand features: the fair-share log-fractions are then nearly
        # linear in the inputs, which the small net fits accurately.
        cap = np.where(view.capacity > 0, view.capacity, 1.0)
        return np.log(view.demand / cap + 1e-6).ravel()

    def fractions(self, view: GnbView) -> np.ndarray:
        """Per-resource share fractions via column-wise softmax (sum to 1)."""
        logits = self.net.forward(self._features(view)).reshape(N_SLICES, N_RESOURCES)
        z = np.exp(logits - logits.max(axis=0))
        return z / z.sum(axis=0)


def heuristic_fractions(demand: np.ndarray) -> np.ndarray:
    weighted = SLICE_WEIGHTS[:, None] * demand
    totals = weighted.sum(axis=0)
    fractions = np.zeros((N_SLICES, N_RESOURCES))
    nz = totals > 0
    fractions[:, nz] = weighted[:, nz] / totals[nz]
    return fractions


def train_centralized_policy(
    capacity: np.ndarray,
    rng: np.random.Generator,
    n_samples: int = 400,
    epochs: int = 3000,
    lr: float = 0.5,
    tolerance: float = 0.05,
) -> tuple[PolicyNet, float, bool]:
    """Fit PolicyNet against the heuristic on synthetic demand states.

    Returns (net, max held-out allocation-fraction error, enabled flag); the
    net is only enabled when the error stays within ``tolerance``.
    """
    capacity = np.asarray(capacity, dtype=float)
    cap_guard = np.where(capacity > 0, capacity, 1.0)
    demands = rng.uniform(0.05, 1.0, size=(n_samples, N_SLICES, N_RESOURCES)) * capacity
    feats = np.array([np.log(d / cap_guard + 1e-6).ravel() for d in demands])
    targets = np.array([np.log(heuristic_fractions(d) + 1e-9).ravel() for d in demands])

    policy = PolicyNet(rng)
    n_train = int(0.8 * n_samples)
    policy.net.train(feats[:n_train], targets[:n_train], epochs=epochs, lr=lr)

    max_err = 0.0
    for d, f in zip(demands[n_train:], feats[n_train:]):
        logits = policy.net.forward(f).reshape(N_SLICES, N_RESOURCES)
        z = np.exp(logits - logits.max(axis=0))
        pred = z / z.sum(axis=0)
        max_err = max(max_err, float(np.max(np.abs(pred - heuristic_fractions(d)))))
    return policy, max_err, max_err <= tolerance


def schedule(
    request: SliceRequest,
    view: GnbView,
    policies,
    security=None,
    bound_s: float = ENFORCE_BOUND_S,
) -> Allocation:
    """Hybrid scheduling of one request (Algorithm-1 flow).

    Classify; LSS/RTS go through the centralized allocator with a latency
    gate and preempting fallback; NRTS through the federated predictor; any
    request failing security verification is quarantined to zero resources.
    """
    slc = classify_slice(request.metadata)
    if slc in (Slice.LSS, Slice.RTS):
        grants = centralized_allocate(view, getattr(policies, "centralized", None))
        if enforce_latency(grants, bound_s, view, slc, request.metadata.packet_size_bytes):
            allocation = Allocation(view.gnb_id, grants, Provenance.CENTRALIZED_AI)
        else:
            allocation = fallback_allocation(request, view, slc)
    else:
        grants = policies.nrts_allocate(request, view)
        allocation = Allocation(view.gnb_id, grants, Provenance.FEDERATED_MODEL)

    if security is not None and not security.verify(request):
        allocation = Allocation(
            view.gnb_id, np.zeros((N_SLICES, N_RESOURCES)), Provenance.QUARANTINE
        )
    return allocation
