"""PUF challenge-response authentication, attack injection, detection metrics.

The PUF is modeled as a noisy secret-keyed nonlinear map: a genuine device
reproduces its enrolled response up to Gaussian read noise, a foreign secret
produces a near-zero-correlation response. Authentication accepts when the
Pearson correlation against the enrolled response strictly exceeds 0.8.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError
from .topology import PUF_KEY_LEN, DeviceState, Slice

AUTH_CORR_THRESHOLD = 0.8
DEMAND_INFLATION = 20.0  # resource-exhaustion multiplier on one slice
MAX_ADVERSARY_FRACTION = 0.3


@dataclass
class PufIdentity:
    """Device secret: 256 i.i.d. standard-normal weights plus read noise."""

    weights: np.ndarray
    sigma_noise: float = 0.05

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (PUF_KEY_LEN,):
            raise ValueError(f"PUF secret must have length {PUF_KEY_LEN}")
        if self.sigma_noise < 0:
            raise ConfigError("sigma_noise must be nonnegative")

    @classmethod
    def generate(cls, rng: np.random.Generator, sigma_noise: float = 0.05) -> "PufIdentity":
        return cls(weights=rng.standard_normal(PUF_KEY_LEN), sigma_noise=sigma_noise)


def puf_response(identity: PufIdentity, challenge: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """tanh(secret * challenge) elementwise plus Gaussian read noise."""
    challenge = np.asarray(challenge, dtype=float)
    if challenge.shape != (PUF_KEY_LEN,):
        raise ValueError(f"challenge must have length {PUF_KEY_LEN}")
    response = np.tanh(identity.weights * challenge)
    if identity.sigma_noise > 0:
        if rng is None:
            raise ValueError("rng required when sigma_noise > 0")
        response = response + rng.normal(0.0, identity.sigma_noise, size=PUF_KEY_LEN)
    return response


def enroll(identity: PufIdentity, challenge: np.ndarray) -> np.ndarray:
    """Noiseless reference response captured at enrollment."""
    noiseless = PufIdentity(identity.weights, sigma_noise=0.0)
    return puf_response(noiseless, challenge)


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; 0.0 when either side has zero variance."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ac = a - a.mean()
    bc = b - b.mean()
    na = float(np.sqrt(np.dot(ac, ac)))
    nb = float(np.sqrt(np.dot(bc, bc)))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(ac, bc) / (na * nb))


def responses_match(fresh: np.ndarray, enrolled: np.ndarray) -> bool:
    """Accept iff correlation strictly exceeds the 0.8 threshold."""
    return pearson(fresh, enrolled) > AUTH_CORR_THRESHOLD


def authenticate(
    identity: PufIdentity,
    challenge: np.ndarray,
    enrolled_response: np.ndarray,
    rng: np.random.Generator | None = None,
) -> bool:
    """Fresh challenge-response check against the enrolled reference."""
    return responses_match(puf_response(identity, challenge, rng), enrolled_response)


class AttackKind(Enum):
    BYZANTINE = "byzantine"
    IMPERSONATION = "impersonation"
    RESOURCE_EXHAUSTION = "resource_exhaustion"


@dataclass
class AttackScenario:
    adversary_fraction: float = 0.0
    attacks: tuple[AttackKind, ...] = ()
    start_s: float = 0.0
    stop_s: float = float("inf")
    target_slice: Slice = Slice.RTS  # slice whose demand gets inflated

    def __post_init__(self):
        self.attacks = tuple(
            AttackKind(a) if not isinstance(a, AttackKind) else a for a in self.attacks
        )
        if not 0.0 <= self.adversary_fraction <= MAX_ADVERSARY_FRACTION:
            raise ConfigError(
                f"adversary_fraction must lie in [0, {MAX_ADVERSARY_FRACTION}]"
            )
        if self.start_s > self.stop_s:
            raise ConfigError("attack window start must precede stop")

    def active(self, kind: AttackKind, t_s: float) -> bool:
        return kind in self.attacks and self.start_s <= t_s < self.stop_s


@dataclass
class AttackEvent:
    kind: AttackKind
    attacker: int
    t_s: float
    victim: int | None = None  # impersonated identity
    slice: Slice | None = None  # inflated slice


def choose_compromised(n_devices: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Seeded adversary selection: floor(fraction * n) device ids."""
    k = int(fraction * n_devices)
    if k == 0:
        return np.zeros(0, dtype=int)
    return np.sort(rng.choice(n_devices, size=k, replace=False))


def impersonation_victim(attacker: int, n_devices: int) -> int:
    """Deterministic victim pairing that never maps a device to itself."""
    return (attacker + 1) % n_devices


def inject_attacks(
    scenario: AttackScenario,
    devices: list[DeviceState],
    t_s: float,
    requesters: np.ndarray | list[int],
) -> list[AttackEvent]:
    """Attack events fired by compromised requesters during this step.

    Byzantine poisoning rides on federated rounds instead and is gated by
    scenario.active(BYZANTINE, t) at aggregation time.
    """
    events: list[AttackEvent] = []
    if scenario.adversary_fraction == 0.0 or not scenario.attacks:
        return events
    n = len(devices)
    for dev_id in requesters:
        dev = devices[int(dev_id)]
        if dev.honest:
            continue
        if scenario.active(AttackKind.IMPERSONATION, t_s):
            events.append(
                AttackEvent(
                    AttackKind.IMPERSONATION,
                    attacker=dev.id,
                    t_s=t_s,
                    victim=impersonation_victim(dev.id, n),
                )
            )
        if scenario.active(AttackKind.RESOURCE_EXHAUSTION, t_s):
            events.append(
                AttackEvent(
                    AttackKind.RESOURCE_EXHAUSTION,
                    attacker=dev.id,
                    t_s=t_s,
                    slice=scenario.target_slice,
                )
            )
    return events


@dataclass
class VerifyDecision:
    t_s: float
    claimed_id: int
    rejected: bool
    is_attack: bool
    attack_kind: AttackKind | None = None


@dataclass
class DetectionMetrics:
    accuracy: float
    per_attack_rates: dict[str, float]
    mean_response_time_s: float
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0


def detection_metrics(events: list[AttackEvent], decisions: list[VerifyDecision]) -> DetectionMetrics:
    """Confusion-matrix accounting over the verification log.

    accuracy = (TP + TN) / decisions; per-attack rate = TP / decided attack
    events of that kind; response time = first detection minus first attack,
    averaged over attackers that were eventually caught.
    """
    tp = sum(1 for d in decisions if d.is_attack and d.rejected)
    tn = sum(1 for d in decisions if not d.is_attack and not d.rejected)
    fp = sum(1 for d in decisions if not d.is_attack and d.rejected)
    fn = sum(1 for d in decisions if d.is_attack and not d.rejected)
    total = tp + tn + fp + fn
    accuracy = (tp + tn) / total if total else 1.0

    rates: dict[str, float] = {}
    for kind in AttackKind:
        hits = sum(1 for d in decisions if d.attack_kind is kind and d.rejected)
        misses = sum(1 for d in decisions if d.attack_kind is kind and not d.rejected)
        if hits + misses:
            rates[kind.value] = hits / (hits + misses)

    # Response clock: first attack event of a device -> its first attributable
    # rejection (impersonation rejections carry the victim's claimed id).
    first_attack: dict[int, float] = {}
    for ev in events:
        if ev.attacker not in first_attack or ev.t_s < first_attack[ev.attacker]:
            first_attack[ev.attacker] = ev.t_s
    response_times = []
    for attacker, t0 in first_attack.items():
        aliases = {attacker} | {
            ev.victim for ev in events if ev.attacker == attacker and ev.victim is not None
        }
        caught = [
            d.t_s for d in decisions if d.is_attack and d.rejected and d.claimed_id in aliases
        ]
        if caught:
            response_times.append(min(caught) - t0)
    mean_rt = float(np.mean(response_times)) if response_times else 0.0
    return DetectionMetrics(
        accuracy=accuracy,
        per_attack_rates=rates,
        mean_response_time_s=mean_rt,
        tp=tp,
        tn=tn,
        fp=fp,
        fn=fn,
    )


class SecurityAgent:
    """Per-request verifier: PUF challenge-response plus demand sanity.

    Keeps the enrolled reference responses, a quarantine ledger and the
    decision log the detection metrics are recomputed from.
    """

    def __init__(
        self,
        identities: dict[int, PufIdentity],
        rng: np.random.Generator,
        quarantine_s: float = 60.0,
        demand_sanity_factor: float = 5.0,
    ):
        self.identities = identities
        self.rng = rng
        self.quarantine_s = quarantine_s
        self.demand_sanity_factor = demand_sanity_factor
        self.challenge = rng.standard_normal(PUF_KEY_LEN)
        self.enrolled = {
            dev_id: enroll(ident, self.challenge) for dev_id, ident in identities.items()
        }
        self.quarantined_until: dict[int, float] = {}
        self.decisions: list[VerifyDecision] = []

    def is_quarantined(self, dev_id: int, t_s: float) -> bool:
        return self.quarantined_until.get(dev_id, -np.inf) > t_s

    def verify_identity(self, claimed_id: int, responder: PufIdentity) -> bool:
        fresh = puf_response(responder, self.challenge, self.rng)
        return responses_match(fresh, self.enrolled[claimed_id])

    def verify(
        self,
        claimed_id: int,
        responder: PufIdentity,
        t_s: float,
        demand_bw: float = 0.0,
        baseline_bw: float = float("inf"),
        is_attack: bool = False,
        attack_kind: AttackKind | None = None,
    ) -> bool:
        """Returns True when the request passes; failures quarantine the id."""
        ok = self.verify_identity(claimed_id, responder)
        if ok and np.isfinite(baseline_bw) and baseline_bw > 0:
            ok = demand_bw <= self.demand_sanity_factor * baseline_bw
        self.decisions.append(
            VerifyDecision(
                t_s=t_s,
                claimed_id=claimed_id,
                rejected=not ok,
                is_attack=is_attack,
                attack_kind=attack_kind,
            )
        )
        if not ok:
            self.quarantined_until[claimed_id] = t_s + self.quarantine_s
        return ok
