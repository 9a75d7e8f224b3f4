"""Compressive-sensing twin synchronization.

Device state vectors x in R^n are compressed to y = Phi x with m = 0.3 n
measurements and recovered at the gNodeB twin by orthogonal matching pursuit
(greedy surrogate for the l1 program: pick the column most correlated with
the residual, least-squares refit on the support, stop on tolerance or
budget). Priority-based adaptive sampling thins LOW-priority vectors by 4x
before compression.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .streams import substream


class Priority(IntEnum):
    LOW = 0
    NORMAL = 1
    HIGH = 2


COMPRESSION_RATIO = 0.3
LOW_PRIORITY_STRIDE = 4
MASK_ZERO_FRACTION = 0.7


def measurement_count(n: int) -> int:
    """Rows of the sensing matrix for an n-length signal: round(0.3 n)."""
    return int(round(COMPRESSION_RATIO * n))


@dataclass
class SensingMatrix:
    """Gaussian(0, 1/m) measurement matrix shared by encoder and decoder.

    With masked=True, 70% of the entries are hard-zeroed (the sparse-matrix
    reading of the measurement design); masked=False keeps it dense.
    """

    m: int
    n: int
    entries: np.ndarray
    seed: int
    masked: bool

    @classmethod
    def build(cls, n: int, seed: int = 0, m: int | None = None, masked: bool = True) -> "SensingMatrix":
        if m is None:
            m = measurement_count(n)
        rng = substream(seed, "sensing-matrix", n, m, int(masked))
        entries = rng.normal(0.0, 1.0 / np.sqrt(max(m, 1)), size=(m, n))
        if masked:
            keep = rng.random((m, n)) >= MASK_ZERO_FRACTION
            entries = entries * keep
        return cls(m=m, n=n, entries=entries, seed=seed, masked=masked)


def compress(x: np.ndarray, phi: SensingMatrix) -> np.ndarray:
    """y = Phi x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (phi.n,):
        raise ValueError(f"signal length {x.shape} does not match matrix columns {phi.n}")
    return phi.entries @ x


@dataclass
class ReconstructionResult:
    x: np.ndarray
    converged: bool
    residual_norm: float
    iterations: int


def reconstruct(y: np.ndarray, phi: SensingMatrix, k_max: int, tol: float = 1e-8) -> ReconstructionResult:
    """Orthogonal matching pursuit recovery of x from y = Phi x.

    Selects at most k_max atoms; returns the best iterate with converged=False
    instead of raising when the residual tolerance is not reached (dense
    signals degrade gracefully).
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (phi.m,):
        raise ValueError(f"measurement length {y.shape} does not match matrix rows {phi.m}")
    A = phi.entries
    col_norms = np.linalg.norm(A, axis=0)
    col_norms[col_norms == 0] = 1.0

    x_hat = np.zeros(phi.n)
    residual = y.copy()
    res_norm = float(np.linalg.norm(residual))
    support: list[int] = []
    it = 0
    while res_norm > tol and it < k_max:
        corr = np.abs(A.T @ residual) / col_norms
        if support:
            corr[support] = -1.0  # never reselect an atom
        j = int(np.argmax(corr))
        if corr[j] <= 0:
            break
        support.append(j)
        coef, *_ = np.linalg.lstsq(A[:, support], y, rcond=None)
        residual = y - A[:, support] @ coef
        res_norm = float(np.linalg.norm(residual))
        it += 1
    if support:
        x_hat[support] = coef
    return ReconstructionResult(
        x=x_hat, converged=res_norm <= tol, residual_norm=res_norm, iterations=it
    )


def priority_downsample(x: np.ndarray, priority: Priority) -> np.ndarray:
    """LOW keeps every 4th element (0, 4, 8, ...); NORMAL/HIGH pass through."""
    x = np.asarray(x)
    if priority is Priority.LOW:
        return x[::LOW_PRIORITY_STRIDE]
    return x


def sync_cost(x, priority: Priority, compressed: bool) -> int:
    """Bytes on the wire for one twin sync: 8 bytes per element after the
    downsample -> (optional) compress pipeline."""
    n = int(x) if isinstance(x, (int, np.integer)) else int(np.asarray(x).shape[0])
    if priority is Priority.LOW:
        n = (n + LOW_PRIORITY_STRIDE - 1) // LOW_PRIORITY_STRIDE  # len(x[::4])
    if compressed:
        n = measurement_count(n)
    return n * 8


@dataclass
class TwinState:
    """Per-device state vector mirrored at the home gNodeB's twin."""

    device_id: int
    state: np.ndarray
    priority: Priority = Priority.NORMAL
    last_sync_ms: float = field(default=-np.inf)
