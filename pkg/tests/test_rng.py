import numpy as np
from scipy import stats

from cbprocess import rng


def test_splitmix64_reference_values():
    # first outputs of the reference SplitMix64 generator seeded with 0
    assert rng.splitmix64(0) == 0xE220A8397B1DCDAF
    state = 0x9E3779B97F4A7C15
    assert rng.splitmix64(state) == 0x6E789E6AA1B965F4


def test_vectorised_keys_match_scalar():
    idx = np.arange(50, dtype=np.uint64)
    keys = rng.path_keys(12345, idx)
    assert [int(k) for k in keys] == [rng.splitmix64(12345 ^ i) for i in range(50)]


def test_raw_is_the_counter_th_output():
    key = rng.path_keys(7, [3])
    expected = [rng.splitmix64((int(key[0]) + c * rng.GOLDEN) & rng.MASK64) for c in range(5)]
    assert [int(rng.raw(key, c)[0]) for c in range(5)] == expected


def test_uniforms_open_interval_and_distribution():
    keys = rng.path_keys(1, np.arange(200_000, dtype=np.uint64))
    u = rng.uniforms(keys, 0)
    assert u.min() > 0 and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_normals_distribution():
    keys = rng.path_keys(2, np.arange(200_000, dtype=np.uint64))
    z = rng.normals(keys, 5)
    assert np.all(np.isfinite(z))
    assert stats.kstest(z, "norm").pvalue > 1e-3


def test_counters_and_salt_give_distinct_streams():
    keys = rng.path_keys(0, np.arange(1000, dtype=np.uint64))
    a, b = rng.raw(keys, 0), rng.raw(keys, 1)
    c = rng.raw(rng.derive_keys(keys, 99), 0)
    assert len(set(a.tolist()) | set(b.tolist()) | set(c.tolist())) == 3000
