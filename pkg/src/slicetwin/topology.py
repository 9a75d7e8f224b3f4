"""Static three-tier network: device placement, class mix, gNodeB capacities.

Devices and gNodeBs are dropped i.i.d. uniform over a square service area and
each device associates with its nearest gNodeB (Euclidean, ties to the lowest
index). Everything here is immutable after construction and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import ConfigError
from .streams import substream

PUF_KEY_LEN = 256


class DeviceClass(IntEnum):
    MMTC = 0
    EMBB = 1
    URLLC = 2


class Slice(IntEnum):
    """Slice classes ordered by scheduling priority (LSS highest)."""

    LSS = 0
    RTS = 1
    NRTS = 2


# Fixed class <-> slice mapping: URLLC->LSS, eMBB->RTS, mMTC->NRTS.
SLICE_OF_CLASS = {
    DeviceClass.MMTC: Slice.NRTS,
    DeviceClass.EMBB: Slice.RTS,
    DeviceClass.URLLC: Slice.LSS,
}
CLASS_OF_SLICE = {s: c for c, s in SLICE_OF_CLASS.items()}

SLICES = (Slice.LSS, Slice.RTS, Slice.NRTS)
RESOURCES = ("cpu", "ram", "bw")  # cores, GB, MHz


@dataclass
class NetworkConfig:
    n_devices: int = 50_000
    n_gnbs: int = 100
    area_km2: float = 1.0
    class_mix: tuple[float, float, float] = (0.6, 0.3, 0.1)  # mMTC, eMBB, URLLC
    gnb_capacity: tuple[float, float, float] = (8.0, 16.0, 400.0)  # cpu, ram, bw
    rng_seed: int = 0

    def validate(self) -> None:
        if self.n_devices < 0 or self.n_gnbs < 0:
            raise ConfigError("n_devices and n_gnbs must be nonnegative")
        if self.n_devices >= 1 and self.n_gnbs < 1:
            raise ConfigError("at least one gNodeB is required when devices exist")
        if self.area_km2 <= 0:
            raise ConfigError("area_km2 must be positive")
        mix = np.asarray(self.class_mix, dtype=float)
        if mix.shape != (3,) or np.any(mix < 0) or np.any(mix > 1):
            raise ConfigError("class_mix must be three fractions in [0, 1]")
        if abs(float(mix.sum()) - 1.0) > 1e-9:
            raise ConfigError(f"class_mix must sum to 1, got {float(mix.sum()):.12g}")
        cap = np.asarray(self.gnb_capacity, dtype=float)
        if cap.shape != (3,) or np.any(cap < 0):
            raise ConfigError("gnb_capacity must be three nonnegative values")

    @property
    def side_m(self) -> float:
        """Side length of the square service area, in meters."""
        return float(np.sqrt(self.area_km2) * 1000.0)


@dataclass
class DeviceState:
    id: int
    pos: np.ndarray  # (2,) meters
    cls: DeviceClass
    slice: Slice
    home_gnb: int
    puf_key: np.ndarray  # (PUF_KEY_LEN,) device secret
    honest: bool = True


@dataclass
class GnbState:
    id: int
    pos: np.ndarray  # (2,) meters
    capacity: np.ndarray  # (3,) cpu cores, ram GB, bw MHz
    alloc: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))  # slice x resource
    attached_devices: list[int] = field(default_factory=list)
    energy_j: np.ndarray = field(default_factory=lambda: np.zeros(3))  # comp, comm, solar offset

    def capacity_ok(self, tol: float = 1e-9) -> bool:
        return bool(np.all(self.alloc.sum(axis=0) <= self.capacity + tol))


def class_counts(n_devices: int, class_mix) -> np.ndarray:
    """Largest-remainder apportionment of n_devices over the three classes."""
    mix = np.asarray(class_mix, dtype=float)
    exact = n_devices * mix
    counts = np.floor(exact).astype(int)
    remainder = n_devices - int(counts.sum())
    if remainder > 0:
        # Distribute leftovers by descending fractional part, ties to lower class index.
        order = np.lexsort((np.arange(3), -(exact - counts)))
        counts[order[:remainder]] += 1
    return counts


def nearest_gnb(pos, gnbs: list[GnbState]) -> int:
    """Index of the gNodeB closest to pos; equidistant ties resolve to the lowest index."""
    if not gnbs:
        raise ValueError("nearest_gnb requires a nonempty gNodeB list")
    gnb_pos = np.array([g.pos for g in gnbs], dtype=float)
    return int(nearest_gnb_indices(np.asarray(pos, dtype=float)[None, :], gnb_pos)[0])


def nearest_gnb_indices(points: np.ndarray, gnb_pos: np.ndarray) -> np.ndarray:
    """Vectorized nearest-gNB association for an (N,2) array of points."""
    if gnb_pos.shape[0] == 0:
        raise ValueError("nearest_gnb_indices requires at least one gNodeB")
    d2 = ((points[:, None, :] - gnb_pos[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)  # argmin takes the first (lowest-index) minimum


def build_topology(cfg: NetworkConfig) -> tuple[list[DeviceState], list[GnbState]]:
    """Construct the device and gNodeB tiers from a seeded generator.

    Class counts follow largest-remainder rounding of cfg.class_mix; positions
    are uniform over the area; each device's home gNB is its nearest one.
    The same seed yields a bit-identical topology.
    """
    cfg.validate()
    side = cfg.side_m

    gnb_rng = substream(cfg.rng_seed, "topology", "gnb")
    gnb_pos = gnb_rng.uniform(0.0, side, size=(cfg.n_gnbs, 2))
    capacity = np.asarray(cfg.gnb_capacity, dtype=float)
    gnbs = [GnbState(id=j, pos=gnb_pos[j], capacity=capacity.copy()) for j in range(cfg.n_gnbs)]

    counts = class_counts(cfg.n_devices, cfg.class_mix)
    dev_classes = np.repeat(
        [DeviceClass.MMTC, DeviceClass.EMBB, DeviceClass.URLLC], counts
    )

    dev_rng = substream(cfg.rng_seed, "topology", "device")
    dev_pos = dev_rng.uniform(0.0, side, size=(cfg.n_devices, 2))
    puf_rng = substream(cfg.rng_seed, "topology", "puf")
    puf_keys = puf_rng.standard_normal((cfg.n_devices, PUF_KEY_LEN))

    if cfg.n_devices > 0:
        home = nearest_gnb_indices(dev_pos, gnb_pos)
    else:
        home = np.zeros(0, dtype=int)

    devices = []
    for i in range(cfg.n_devices):
        cls = DeviceClass(int(dev_classes[i]))
        devices.append(
            DeviceState(
                id=i,
                pos=dev_pos[i],
                cls=cls,
                slice=SLICE_OF_CLASS[cls],
                home_gnb=int(home[i]),
                puf_key=puf_keys[i],
            )
        )
        gnbs[int(home[i])].attached_devices.append(i)
    return devices, gnbs
