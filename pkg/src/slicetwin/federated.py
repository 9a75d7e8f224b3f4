"""Federated demand learning for the NRTS path.

Clients fit small 64-hidden-unit regressors on their local demand windows and
ship weight deltas; the coordinator aggregates with Krum (Byzantine-robust
selection over the n - f - 2 closest peers) or plain sample-weighted FedAvg,
optionally squeezing updates through the compressive-sensing pipeline
(top-k sparsification, y = Phi x, OMP recovery at the aggregator).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cybertwin import SensingMatrix, compress, reconstruct
from .errors import AggregationError
from .nn import Mlp
from .streams import substream

BYZANTINE_SCALE = 10.0  # sign-flip attack magnitude
DEFAULT_BYZANTINE_FRACTION = 0.3  # threat model: up to 30% of nodes


@dataclass
class ModelUpdate:
    client_id: int
    delta: np.ndarray  # flattened weight delta
    sample_count: int
    bytes_on_wire: int = 0

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        if not np.all(np.isfinite(self.delta)):
            raise ValueError(f"client {self.client_id}: update contains NaN/Inf")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


@dataclass
class AggregationRound:
    index: int
    participants: list[int]
    f: int
    aggregate: ModelUpdate
    accuracy: float
    bytes_total: int
    updates: list[ModelUpdate] = field(default_factory=list)


@dataclass
class FlClient:
    client_id: int
    x: np.ndarray
    y: np.ndarray
    freshness: float = 0.0  # timestamp of newest local sample
    byzantine: bool = False

    @property
    def sample_count(self) -> int:
        return int(np.atleast_2d(self.x).shape[0]) if self.x is not None and np.size(self.x) else 0


def train_local(model: Mlp, data, epochs: int = 50, lr: float = 0.1) -> ModelUpdate | None:
    """Local gradient-descent refinement; returns the weight delta.

    Empty data skips the round (returns None). The recorded training loss is
    non-increasing by construction of Mlp.train.
    """
    x, y = data
    if x is None or np.size(x) == 0:
        return None
    x = np.atleast_2d(np.asarray(x, dtype=float))
    before = model.get_params()
    model.train(x, y, epochs=epochs, lr=lr)
    delta = model.get_params() - before
    model.set_params(before)  # the delta is shipped; the global model applies it
    return ModelUpdate(client_id=-1, delta=delta, sample_count=x.shape[0])


def krum_aggregate(updates: list[ModelUpdate], f: int) -> ModelUpdate:
    """Select the update with the smallest sum of its n-f-2 nearest squared
    distances; requires n >= 2f + 3, ties resolve to the lowest client id."""
    n = len(updates)
    if n < 2 * f + 3:
        raise AggregationError(f"Krum needs at least 2f+3={2 * f + 3} updates, got {n}")
    vecs = np.array([u.delta for u in updates])
    sq = ((vecs[:, None, :] - vecs[None, :, :]) ** 2).sum(axis=2)
    n_closest = n - f - 2
    scores = np.empty(n)
    for i in range(n):
        others = np.delete(sq[i], i)
        others.sort()
        scores[i] = others[:n_closest].sum()
    best = scores.min()
    candidates = [u for u, s in zip(updates, scores) if s == best]
    return min(candidates, key=lambda u: u.client_id)


def fedavg_aggregate(updates: list[ModelUpdate]) -> ModelUpdate:
    """Sample-count-weighted mean of the update vectors."""
    if not updates:
        raise AggregationError("FedAvg requires at least one update")
    weights = np.array([u.sample_count for u in updates], dtype=float)
    vecs = np.array([u.delta for u in updates])
    mean = (weights[:, None] * vecs).sum(axis=0) / weights.sum()
    return ModelUpdate(client_id=-1, delta=mean, sample_count=int(weights.sum()))


def rounds_to_accuracy(history, threshold: float = 0.95) -> int | None:
    """1-based index of the first round reaching the accuracy threshold."""
    if len(history) == 0:
        raise ValueError("history must be nonempty")
    for i, acc in enumerate(history, start=1):
        if acc >= threshold:
            return i
    return None


def sparsify_topk(vec: np.ndarray, k: int) -> np.ndarray:
    """Zero all but the k largest-magnitude coordinates."""
    out = np.zeros_like(vec)
    if k <= 0:
        return out
    keep = np.argsort(np.abs(vec))[-k:]
    out[keep] = vec[keep]
    return out


class UpdateCodec:
    """Top-k sparsify + compressive-sensing transport for weight deltas.

    m = ceil(0.3 n) measurement rows, so compressed uplink bytes per client
    are exactly ceil(0.3 n) * 8.
    """

    def __init__(self, n_params: int, seed: int = 0):
        self.n = n_params
        self.m = math.ceil(0.3 * n_params)
        self.phi = SensingMatrix.build(n_params, seed=seed, m=self.m, masked=False)
        # Stay inside the reliable OMP regime k <= m / (2 ln n).
        self.k_keep = max(1, int(self.m / (2.0 * math.log(max(self.n, 3)))))

    @property
    def bytes_compressed(self) -> int:
        return self.m * 8

    @property
    def bytes_raw(self) -> int:
        return self.n * 8

    def encode(self, delta: np.ndarray) -> np.ndarray:
        return compress(sparsify_topk(delta, self.k_keep), self.phi)

    def decode(self, y: np.ndarray) -> np.ndarray:
        return reconstruct(y, self.phi, k_max=self.k_keep + 4, tol=1e-10).x


class FederatedSystem:
    """Round-driven coordinator owning the global NRTS demand model."""

    def __init__(
        self,
        n_in: int = 4,
        n_hidden: int = 64,
        aggregator: str = "krum",
        participation: str = "topk_fresh",
        k_participants: int = 10,
        compress_updates: bool = False,
        seed: int = 0,
        epochs: int = 20,
        lr: float = 0.2,
    ):
        if aggregator not in ("krum", "fedavg"):
            raise ValueError(f"unknown aggregator {aggregator!r}")
        if participation not in ("topk_fresh", "first_k", "all"):
            raise ValueError(f"unknown participation policy {participation!r}")
        self.aggregator = aggregator
        self.participation = participation
        self.k = k_participants
        self.compress_updates = compress_updates
        self.epochs = epochs
        self.lr = lr
        self.rng = substream(seed, "federated")
        self.global_model = Mlp(n_in, n_hidden, 1, self.rng)
        self.codec = UpdateCodec(self.global_model.n_params, seed=seed)
        self.eval_x, self.eval_y = self._make_eval_set(n_in, self.rng)
        self.history: list[AggregationRound] = []
        self.bytes_total = 0

    @staticmethod
    def _make_eval_set(n_in: int, rng: np.random.Generator, n: int = 256):
        """Held-out demand windows: next value extends a noisy weighted mean."""
        x = rng.uniform(0.0, 1.0, size=(n, n_in))
        w = np.linspace(0.5, 1.5, n_in)
        w /= w.sum()
        y = (x @ w)[:, None]
        return x, y

    def accuracy(self) -> float:
        """1 - normalized RMSE of the global model on the held-out set."""
        pred = self.global_model.forward(self.eval_x)
        rmse = float(np.sqrt(np.mean((pred - self.eval_y) ** 2)))
        ref = float(np.sqrt(np.mean(self.eval_y**2)))
        if ref == 0:
            return 1.0 if rmse == 0 else 0.0
        return max(0.0, 1.0 - rmse / ref)

    def select_participants(self, clients: list[FlClient]) -> list[FlClient]:
        eligible = [c for c in clients if c.sample_count > 0]
        if self.participation == "all":
            return eligible
        if self.participation == "first_k":
            return sorted(eligible, key=lambda c: c.client_id)[: self.k]
        return sorted(eligible, key=lambda c: (-c.freshness, c.client_id))[: self.k]

    def run_round(self, clients: list[FlClient], index: int = 0) -> AggregationRound:
        """One synchronization round: local training, optional compression,
        Byzantine injection, aggregation, global apply and evaluation."""
        participants = self.select_participants(clients)
        if not participants:
            raise AggregationError("no eligible clients for this round")

        updates = []
        for client in participants:
            local = Mlp(self.global_model.n_in, self.global_model.n_hidden, 1, self.rng)
            local.set_params(self.global_model.get_params())
            upd = train_local(local, (client.x, client.y), epochs=self.epochs, lr=self.lr)
            if upd is None:
                continue
            delta = upd.delta
            if client.byzantine:
                delta = -BYZANTINE_SCALE * delta
            if self.compress_updates:
                delta = self.codec.decode(self.codec.encode(delta))
                wire = self.codec.bytes_compressed
            else:
                wire = self.codec.bytes_raw
            updates.append(
                ModelUpdate(client.client_id, delta, upd.sample_count, bytes_on_wire=wire)
            )
        if not updates:
            raise AggregationError("all participants skipped the round")

        if self.aggregator == "krum":
            f = int(DEFAULT_BYZANTINE_FRACTION * len(updates))
            agg = krum_aggregate(updates, f)
        else:
            f = 0
            agg = fedavg_aggregate(updates)

        self.global_model.set_params(self.global_model.get_params() + agg.delta)
        round_bytes = sum(u.bytes_on_wire for u in updates)
        self.bytes_total += round_bytes
        rnd = AggregationRound(
            index=index,
            participants=[c.client_id for c in participants],
            f=f,
            aggregate=agg,
            accuracy=self.accuracy(),
            bytes_total=round_bytes,
            updates=updates,
        )
        self.history.append(rnd)
        return rnd

    def predict(self, features: np.ndarray) -> float:
        return float(self.global_model.forward(features)[0, 0])


def run_round(clients, aggregator, participation_policy="topk_fresh", compress: bool = False, seed: int = 0, index: int = 0) -> AggregationRound:
    """One-shot convenience wrapper around a fresh FederatedSystem round."""
    n_in = int(np.atleast_2d(clients[0].x).shape[1])
    system = FederatedSystem(
        n_in=n_in,
        aggregator=aggregator,
        participation=participation_policy,
        compress_updates=compress,
        seed=seed,
    )
    return system.run_round(clients, index=index)
