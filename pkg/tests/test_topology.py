import numpy as np
import pytest

from slicetwin.errors import ConfigError
from slicetwin.streams import substream
from slicetwin.topology import (
    DeviceClass,
    NetworkConfig,
    Slice,
    SLICE_OF_CLASS,
    build_topology,
    class_counts,
    nearest_gnb,
)


def test_class_counts_reference_mix():
    counts = class_counts(50_000, (0.6, 0.3, 0.1))
    assert counts.tolist() == [30_000, 15_000, 5_000]


def test_class_counts_largest_remainder():
    # 7 * 1/3 = 2.33 each; two leftovers go to the largest remainders
    counts = class_counts(7, (1 / 3, 1 / 3, 1 / 3))
    assert counts.sum() == 7
    assert max(counts) - min(counts) <= 1


@pytest.mark.parametrize("n", [1, 10, 99, 1234])
def test_class_counts_never_off_by_more_than_one(n):
    mix = (0.6, 0.3, 0.1)
    counts = class_counts(n, mix)
    assert counts.sum() == n
    for c, f in zip(counts, mix):
        assert abs(c - n * f) < 1.0


def test_build_topology_counts_and_home():
    cfg = NetworkConfig(n_devices=2000, n_gnbs=20, rng_seed=5)
    devices, gnbs = build_topology(cfg)
    assert len(devices) == 2000
    assert len(gnbs) == 20
    by_class = {c: 0 for c in DeviceClass}
    for d in devices:
        by_class[d.cls] += 1
        assert d.slice == SLICE_OF_CLASS[d.cls]
        assert 0 <= d.pos[0] <= cfg.side_m and 0 <= d.pos[1] <= cfg.side_m
        assert d.id in gnbs[d.home_gnb].attached_devices
    assert by_class[DeviceClass.MMTC] == 1200
    assert by_class[DeviceClass.EMBB] == 600
    assert by_class[DeviceClass.URLLC] == 200


def test_build_topology_empty_devices():
    devices, gnbs = build_topology(NetworkConfig(n_devices=0, n_gnbs=1))
    assert devices == []
    assert len(gnbs) == 1


def test_build_topology_deterministic():
    cfg = NetworkConfig(n_devices=10, n_gnbs=3, rng_seed=7)
    d1, g1 = build_topology(cfg)
    d2, g2 = build_topology(cfg)
    for a, b in zip(d1, d2):
        assert np.array_equal(a.pos, b.pos)
        assert a.home_gnb == b.home_gnb
        assert np.array_equal(a.puf_key, b.puf_key)
    for a, b in zip(g1, g2):
        assert np.array_equal(a.pos, b.pos)


def test_no_device_closer_to_foreign_gnb():
    devices, gnbs = build_topology(NetworkConfig(n_devices=300, n_gnbs=7, rng_seed=3))
    gnb_pos = np.array([g.pos for g in gnbs])
    for d in devices:
        dists = np.linalg.norm(gnb_pos - d.pos, axis=1)
        assert dists[d.home_gnb] <= dists.min() + 1e-12


def test_nearest_gnb_unique_minimum():
    _, gnbs = build_topology(NetworkConfig(n_devices=0, n_gnbs=2, rng_seed=1))
    gnbs[0].pos = np.array([1.0, 0.0])
    gnbs[1].pos = np.array([5.0, 5.0])
    assert nearest_gnb((0.0, 0.0), gnbs) == 0


def test_nearest_gnb_tie_breaks_low_index():
    _, gnbs = build_topology(NetworkConfig(n_devices=0, n_gnbs=2, rng_seed=1))
    gnbs[0].pos = np.array([3.0, 4.0])
    gnbs[1].pos = np.array([4.0, 3.0])  # both at distance 5
    assert nearest_gnb((0.0, 0.0), gnbs) == 0


def test_nearest_gnb_matches_bruteforce_scan():
    rng = substream(11, "nearest-oracle")
    _, gnbs = build_topology(NetworkConfig(n_devices=0, n_gnbs=10, rng_seed=2))
    points = rng.uniform(0, 1000, size=(1000, 2))
    for p in points:
        best, best_d = 0, float("inf")
        for j, g in enumerate(gnbs):
            d = float(np.hypot(*(p - g.pos)))
            if d < best_d:
                best, best_d = j, d
        assert nearest_gnb(p, gnbs) == best


def test_nearest_gnb_empty_list_rejected():
    with pytest.raises(ValueError):
        nearest_gnb((0.0, 0.0), [])


def test_invalid_mix_rejected():
    with pytest.raises(ConfigError):
        NetworkConfig(class_mix=(0.5, 0.5, 0.5)).validate()


def test_zero_gnbs_with_devices_rejected():
    with pytest.raises(ConfigError):
        NetworkConfig(n_devices=10, n_gnbs=0).validate()


def test_capacity_holds_on_fresh_gnbs():
    _, gnbs = build_topology(NetworkConfig(n_devices=5, n_gnbs=2, rng_seed=0))
    for g in gnbs:
        assert g.capacity_ok()
