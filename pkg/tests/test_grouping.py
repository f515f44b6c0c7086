import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsrdenoise.grouping import (
    PatchGroup,
    PatchSpec,
    aggregate,
    block_match,
    reference_positions,
    subtract_group_mean,
)

from oracles import brute_force_match


def test_reference_positions_exact_tiling():
    assert reference_positions((8, 8), PatchSpec(4, 1, 8, 4)) == [(0, 0), (0, 4), (4, 0), (4, 4)]


def test_reference_positions_forced_last_offset():
    pos = reference_positions((9, 9), PatchSpec(4, 1, 8, 4))
    assert len(pos) == 9
    assert sorted({r for r, _ in pos}) == [0, 4, 5]


def test_reference_positions_single():
    assert reference_positions((5, 5), PatchSpec(5, 1, 5, 2)) == [(0, 0)]


def test_reference_positions_too_small():
    with pytest.raises(ValueError):
        reference_positions((3, 8), PatchSpec(4, 1, 8, 4))


@pytest.mark.parametrize("d, expected", [(4, 4), (8, 4), (9, 5)])
def test_default_stride(d, expected):
    assert PatchSpec(d, 1, 20).stride == expected


@pytest.mark.parametrize("kw", [dict(d=0, m=1, window=4), dict(d=4, m=0, window=4),
                                dict(d=4, m=1, window=3), dict(d=4, m=1, window=8, stride=0)])
def test_patch_spec_invariants(kw):
    with pytest.raises(ValueError):
        PatchSpec(**kw)


def test_self_match_first(rng):
    img = rng.uniform(0, 255, (20, 20))
    spec = PatchSpec(4, 6, 10)
    for ref in [(0, 0), (7, 3), (16, 16)]:
        g = block_match(img, ref, spec)
        assert tuple(g.positions[0]) == ref
        np.testing.assert_array_equal(g.matrix[:, 0], img[ref[0] : ref[0] + 4, ref[1] : ref[1] + 4].ravel())
        assert np.all(g.mean_patch == 0)


def test_constant_image_raster_first():
    img = np.full((12, 12), 7.0)
    spec = PatchSpec(3, 5, 6)
    g = block_match(img, (0, 0), spec)
    # window clipped to rows/cols 0..2
    assert [tuple(p) for p in g.positions] == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]


def test_constant_image_reference_then_raster():
    img = np.full((12, 12), 7.0)
    g = block_match(img, (5, 5), PatchSpec(3, 4, 6))
    # window rows/cols 2..7
    assert [tuple(p) for p in g.positions] == [(5, 5), (2, 2), (2, 3), (2, 4)]


def test_duplicate_fill_when_window_small():
    img = np.arange(25.0).reshape(5, 5)
    g = block_match(img, (0, 0), PatchSpec(4, 7, 4))
    # only 4 candidate positions exist
    pos = [tuple(p) for p in g.positions]
    assert pos[4:] == pos[:3]
    assert len(set(pos)) == 4


def test_window_candidates_stay_inside(rng):
    img = rng.uniform(0, 255, (30, 30))
    spec = PatchSpec(5, 20, 9)
    ref = (13, 2)
    g = block_match(img, ref, spec)
    for r, c in g.positions:
        assert 0 <= r <= 25 and 0 <= c <= 25
        assert ref[0] - 4 <= r <= ref[0] + 4 and ref[1] - 4 <= c <= ref[1] + 4


@pytest.mark.parametrize("seed", range(30))
def test_block_match_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 4, (16, 16)).astype(float)  # small alphabet forces ties
    spec = PatchSpec(4, 8, 16)
    ref = tuple(int(v) for v in rng.integers(0, 13, 2))
    got = [tuple(p) for p in block_match(img, ref, spec).positions]
    assert got == brute_force_match(img, ref, 4, 8, 16)


def test_distances_non_decreasing(rng):
    img = rng.uniform(0, 255, (24, 24))
    g = block_match(img, (10, 10), PatchSpec(4, 30, 16))
    dist = ((g.matrix - g.matrix[:, :1]) ** 2).sum(axis=0)
    assert np.all(np.diff(dist) >= 0)


def test_subtract_identical_columns():
    col = np.arange(9.0)
    g = subtract_group_mean(PatchGroup(np.tile(col[:, None], (1, 4)), np.zeros((4, 2), int)))
    np.testing.assert_array_equal(g.matrix, 0)
    np.testing.assert_array_equal(g.mean_patch, col)


def test_subtract_twice_gives_zero_mean(rng):
    g = subtract_group_mean(PatchGroup(rng.normal(size=(9, 5)), np.zeros((5, 2), int)))
    mu_first = g.mean_patch.copy()
    g2 = subtract_group_mean(g)
    np.testing.assert_allclose(g2.mean_patch - mu_first, 0, atol=1e-12)
    np.testing.assert_allclose(g2.matrix, g.matrix, atol=1e-12)


def test_subtract_two_columns():
    u, v = np.array([1.0, 5.0, -2.0]), np.array([3.0, 1.0, 0.0])
    g = subtract_group_mean(PatchGroup(np.stack([u, v], axis=1), np.zeros((2, 2), int)))
    np.testing.assert_allclose(g.matrix[:, 0], (u - v) / 2)
    np.testing.assert_allclose(g.matrix[:, 1], (v - u) / 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_subtract_round_trip(seed, m):
    rng = np.random.default_rng(seed)
    mat = rng.uniform(-300, 300, (16, m))
    g = subtract_group_mean(PatchGroup(mat, np.zeros((m, 2), int)))
    np.testing.assert_allclose(g.matrix.sum(axis=1), 0, atol=1e-10)
    np.testing.assert_allclose(g.restored(), mat, atol=1e-12)


def test_aggregate_single_patch():
    patch = np.arange(16.0).reshape(4, 4)
    g = PatchGroup(patch.reshape(16, 1), np.array([[0, 0]]))
    np.testing.assert_array_equal(aggregate([g], (4, 4)), patch)


def test_aggregate_overlap_average():
    a = PatchGroup(np.full((4, 1), 10.0), np.array([[0, 0]]))
    b = PatchGroup(np.full((4, 1), 20.0), np.array([[1, 1]]))
    out = aggregate([a, b], (3, 3), fallback=np.full((3, 3), -1.0))
    assert out[1, 1] == 15.0
    assert out[0, 0] == 10.0 and out[2, 2] == 20.0
    assert out[0, 2] == -1.0 and out[2, 0] == -1.0


def test_aggregate_tiling_reconstructs(rng):
    img = rng.uniform(0, 255, (12, 16))
    spec = PatchSpec(4, 1, 4, 4)
    groups = [block_match(img, ref, spec) for ref in reference_positions(img.shape, spec)]
    np.testing.assert_array_equal(aggregate(groups, img.shape), img)


def test_aggregate_unmodified_groups_reproduce_source(rng):
    img = rng.uniform(0, 255, (23, 21))
    spec = PatchSpec(5, 6, 11, 3)
    groups = [subtract_group_mean(block_match(img, ref, spec))
              for ref in reference_positions(img.shape, spec)]
    np.testing.assert_allclose(aggregate(groups, img.shape), img, atol=1e-10)


def test_aggregate_needs_fallback():
    with pytest.raises(ValueError):
        aggregate([], (3, 3))
    np.testing.assert_array_equal(aggregate([], (2, 2), fallback=np.ones((2, 2))), 1.0)
