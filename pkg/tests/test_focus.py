import numpy as np
import pytest

from litefocus.errors import ValidationError
from litefocus.focus import (CompensationSet, Spectrogrid, build_focus_set, compensation_count,
                             cross_frequency_sample, expected_focus_size, floor_fraction, same_frequency_set,
                             token_coords, token_index)


def comp_of(indices, n_tokens):
    return CompensationSet(indices=np.asarray(indices, dtype=np.int64), n_tokens=n_tokens, r=0.0, seed=0)


def test_token_index():
    grid = Spectrogrid(3, 2)
    assert token_index(grid, 0, 0) == 0
    assert token_index(grid, 1, 1) == 3
    assert token_coords(grid, 3) == (1, 1)
    assert token_coords(grid, 4) == (2, 0)


@pytest.mark.parametrize("a, b", [(3, 0), (0, 2), (-1, 0)])
def test_token_index_out_of_range(a, b):
    with pytest.raises(ValidationError):
        token_index(Spectrogrid(3, 2), a, b)


def test_grid_validation():
    with pytest.raises(ValidationError):
        Spectrogrid(0, 4)
    with pytest.raises(ValidationError):
        Spectrogrid(4, 4, layout="frequency-major")
    assert Spectrogrid(256, 16).n_tokens == 4096


def test_same_frequency_set():
    grid = Spectrogrid(3, 2)
    assert same_frequency_set(grid, 0).tolist() == [0, 2, 4]
    assert same_frequency_set(grid, 3).tolist() == [1, 3, 5]
    single_band = Spectrogrid(5, 1)
    for i in range(5):
        assert same_frequency_set(single_band, i).tolist() == [0, 1, 2, 3, 4]
    with pytest.raises(ValidationError):
        same_frequency_set(grid, 6)


def test_floor_is_exact_on_decimal_fractions():
    assert floor_fraction(0.29, 100) == 29
    assert floor_fraction(0.1, 4096) == 409
    assert compensation_count(10, 0.25) == 2


@pytest.mark.parametrize("r, expected", [(0, []), (1, list(range(10)))])
def test_cross_frequency_sample_extremes(r, expected):
    assert cross_frequency_sample(10, r, 5).indices.tolist() == expected


def test_cross_frequency_sample_size_and_order():
    comp = cross_frequency_sample(10, 0.25, 5)
    assert len(comp) == 2
    for seed in range(50):
        idx = cross_frequency_sample(97, 0.3, seed).indices
        assert len(idx) == 29
        assert np.all(np.diff(idx) > 0)
        assert idx.min() >= 0 and idx.max() < 97


def test_cross_frequency_sample_deterministic():
    a = cross_frequency_sample(4096, 0.1, 42)
    cross_frequency_sample.cache_clear()
    b = cross_frequency_sample(4096, 0.1, 42)
    assert a.indices.tobytes() == b.indices.tobytes()
    assert not np.array_equal(a.indices, cross_frequency_sample(4096, 0.1, 43).indices)
    assert not a.indices.flags.writeable


@pytest.mark.parametrize("r", [-0.1, 1.5, float("nan")])
def test_cross_frequency_sample_bad_r(r):
    with pytest.raises(ValidationError):
        cross_frequency_sample(10, r, 0)


def test_cross_frequency_sample_is_uniform():
    hits = np.zeros(20)
    for seed in range(2000):
        hits[cross_frequency_sample(20, 0.25, seed).indices] += 1
    # each index is drawn with probability 5/20
    assert np.abs(hits / 2000 - 0.25).max() < 0.05


def test_focus_set_union():
    grid = Spectrogrid(3, 2)
    focus = build_focus_set(grid, 0, comp_of([1], 6))
    assert focus.indices.tolist() == [0, 1, 2, 4]
    assert focus.owner == 0


def test_focus_set_empty_compensation():
    grid = Spectrogrid(4, 3)
    for i in range(grid.n_tokens):
        focus = build_focus_set(grid, i, comp_of([], 12))
        assert np.array_equal(focus.indices, same_frequency_set(grid, i))


def test_focus_set_compensation_only():
    grid = Spectrogrid(3, 2)
    for i in range(6):
        assert build_focus_set(grid, i, comp_of([3, 5], 6), include_same_freq=False).indices.tolist() == [3, 5]


def test_focus_set_rejects_foreign_compensation():
    with pytest.raises(ValidationError):
        build_focus_set(Spectrogrid(3, 2), 0, comp_of([1], 8))


def test_expected_focus_size():
    grid = Spectrogrid(256, 16)
    assert expected_focus_size(grid, 0) == 256
    assert expected_focus_size(grid, 1) == 4096
    assert expected_focus_size(grid, 0.1) == pytest.approx(639.4375)
    assert expected_focus_size(grid, 0.1) / grid.n_tokens == pytest.approx(0.1561, abs=1e-4)


def test_focus_size_monte_carlo():
    grid = Spectrogrid(8, 4)
    r = 0.25
    sizes = np.array([len(build_focus_set(grid, 0, cross_frequency_sample(grid.n_tokens, r, seed)))
                      for seed in range(10000)])
    stderr = sizes.std(ddof=1) / np.sqrt(len(sizes))
    assert abs(sizes.mean() - expected_focus_size(grid, r)) < 3 * stderr


@pytest.mark.parametrize("n_t", [1, 2, 7, 31, 64])
@pytest.mark.parametrize("n_f", [1, 3, 16, 64])
def test_token_index_is_a_bijection(n_t, n_f):
    grid = Spectrogrid(n_t, n_f)
    seen = []
    for a in range(n_t):
        for b in range(n_f):
            i = token_index(grid, a, b)
            assert token_coords(grid, i) == (a, b)
            seen.append(i)
    assert sorted(seen) == list(range(grid.n_tokens))


def test_same_frequency_sets_partition_tokens():
    grid = Spectrogrid(9, 5)
    bands = [same_frequency_set(grid, b) for b in range(grid.n_f)]
    assert sorted(np.concatenate(bands).tolist()) == list(range(grid.n_tokens))
    for i in range(grid.n_tokens):
        assert np.array_equal(same_frequency_set(grid, i), bands[i % grid.n_f])


@pytest.mark.parametrize("r", [0.0, 0.1, 0.5])
def test_every_query_is_in_its_own_focus_set(r):
    grid = Spectrogrid(9, 5)
    for seed in range(20):
        comp = cross_frequency_sample(grid.n_tokens, r, seed)
        for i in range(grid.n_tokens):
            assert i in build_focus_set(grid, i, comp).indices
