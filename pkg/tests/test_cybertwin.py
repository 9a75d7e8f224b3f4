import numpy as np
import pytest

from slicetwin.cybertwin import (
    Priority,
    SensingMatrix,
    compress,
    measurement_count,
    priority_downsample,
    reconstruct,
    sync_cost,
)
from slicetwin.streams import substream


def naive_matvec(matrix, vec):
    """Triple-checked row-by-row oracle for y = A x."""
    rows, cols = matrix.shape
    out = np.zeros(rows)
    for i in range(rows):
        acc = 0.0
        for j in range(cols):
            acc += matrix[i, j] * vec[j]
        out[i] = acc
    return out


def sparse_signal(n, k, rng):
    x = np.zeros(n)
    support = rng.choice(n, size=k, replace=False)
    x[support] = rng.normal(0.0, 1.0, size=k)
    return x


def test_compress_zero_vector():
    phi = SensingMatrix.build(50, seed=1)
    assert np.array_equal(compress(np.zeros(50), phi), np.zeros(phi.m))


def test_measurement_count_reference_dimensions():
    phi = SensingMatrix.build(1000, seed=0)
    assert (phi.m, phi.n) == (300, 1000)
    assert measurement_count(1000) == 300


def test_compress_matches_naive_matvec():
    rng = substream(2, "matvec")
    phi = SensingMatrix.build(100, seed=2, masked=False)
    assert phi.m == 30
    x = sparse_signal(100, 10, rng)
    assert np.max(np.abs(compress(x, phi) - naive_matvec(phi.entries, x))) < 1e-12


def test_compress_dimension_mismatch():
    phi = SensingMatrix.build(100, seed=3)
    with pytest.raises(ValueError):
        compress(np.zeros(99), phi)


def test_compress_linearity():
    rng = substream(4, "linear")
    phi = SensingMatrix.build(200, seed=4)
    x, z = rng.normal(size=200), rng.normal(size=200)
    a, b = 2.5, -1.25
    lhs = compress(a * x + b * z, phi)
    rhs = a * compress(x, phi) + b * compress(z, phi)
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * max(1.0, float(np.max(np.abs(lhs))))


def test_masked_matrix_sparsity_level():
    phi = SensingMatrix.build(1000, seed=5, masked=True)
    zero_frac = float(np.mean(phi.entries == 0.0))
    assert abs(zero_frac - 0.7) < 0.01


def test_matrix_identical_for_shared_seed():
    a = SensingMatrix.build(300, seed=9)
    b = SensingMatrix.build(300, seed=9)
    assert np.array_equal(a.entries, b.entries)


def test_reconstruct_zero_measurement():
    phi = SensingMatrix.build(100, seed=6)
    res = reconstruct(np.zeros(phi.m), phi, k_max=10)
    assert np.array_equal(res.x, np.zeros(100))
    assert res.iterations == 0
    assert res.converged


@pytest.mark.parametrize("masked", [False, True])
def test_sparse_roundtrip_recovery(masked):
    # 10-sparse signals in the reliable regime k <= m / (2 log n).
    successes = 0
    for trial in range(100):
        rng = substream(7, "roundtrip", trial, int(masked))
        phi = SensingMatrix.build(1000, seed=1000 * int(masked) + trial, masked=masked)
        x = sparse_signal(1000, 10, rng)
        res = reconstruct(compress(x, phi), phi, k_max=10, tol=1e-10)
        if np.linalg.norm(res.x - x) / np.linalg.norm(x) < 1e-6:
            successes += 1
    assert successes >= 99


def test_roundtrip_recovers_support_exactly():
    rng = substream(8, "support")
    phi = SensingMatrix.build(500, seed=8, masked=False)
    x = sparse_signal(500, 8, rng)
    res = reconstruct(compress(x, phi), phi, k_max=8, tol=1e-10)
    assert set(np.nonzero(res.x)[0]) == set(np.nonzero(x)[0])


def test_dense_signal_degrades_gracefully():
    rng = substream(9, "dense")
    phi = SensingMatrix.build(200, seed=9)
    x = rng.normal(size=200)  # not sparse: pursuit cannot succeed
    res = reconstruct(compress(x, phi), phi, k_max=10, tol=1e-10)
    assert not res.converged
    assert res.residual_norm > 0
    assert np.count_nonzero(res.x) <= 10


def test_downsample_stride_example():
    x = np.array([1, 2, 3, 4, 5, 6, 7, 8])
    assert priority_downsample(x, Priority.LOW).tolist() == [1, 5]


def test_downsample_identity_branches():
    x = np.arange(17)
    assert np.array_equal(priority_downsample(x, Priority.HIGH), x)
    assert np.array_equal(priority_downsample(x, Priority.NORMAL), x)


def test_downsample_length_arithmetic():
    assert priority_downsample(np.zeros(1000), Priority.LOW).shape == (250,)


def test_downsample_never_grows():
    rng = substream(10, "len")
    for _ in range(20):
        n = int(rng.integers(0, 400))
        x = np.zeros(n)
        for prio in Priority:
            assert priority_downsample(x, prio).shape[0] <= n


def test_sync_cost_compression_ratio():
    compressed = sync_cost(1000, Priority.NORMAL, compressed=True)
    raw = sync_cost(1000, Priority.NORMAL, compressed=False)
    assert compressed == 2400
    assert raw == 8000
    assert compressed / raw == 0.3


def test_sync_cost_low_priority_uncompressed():
    assert sync_cost(1000, Priority.LOW, compressed=False) == 250 * 8


def test_sync_cost_empty_vector():
    assert sync_cost(0, Priority.NORMAL, compressed=True) == 0
    assert sync_cost(np.zeros(0), Priority.LOW, compressed=False) == 0


def test_sync_cost_accepts_vectors():
    assert sync_cost(np.zeros(1000), Priority.NORMAL, True) == 2400
