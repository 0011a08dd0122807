import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evk.errors import DomainMismatch, EmptyMask, SizeMismatch, ZeroDepth
from evk.geom import Mask2D, View, VoxelGrid, ring_views
from evk.maskvote import (
    VoteConfig, dilate_ball, dilate_mask, mask_iou, project_point, threshold_mask, vote,
)
from evk.geom import CountGrid

FRONT = View(100, 100, 64, 64, 128, 128, np.eye(3), [0, 0, 2])


def test_project_principal_ray():
    p = project_point(FRONT, [0, 0, 0])
    assert (p.u, p.v, p.depth, p.behind) == (64, 64, 2, False)


def test_project_offset_point():
    p = project_point(FRONT, [0.5, 0, 0])
    assert p.u == 64 + 100 * 0.5 / 2 == 89
    assert p.v == 64


def test_project_behind_and_zero_depth():
    assert project_point(FRONT, [0, 0, -3]).behind
    with pytest.raises(ZeroDepth):
        project_point(FRONT, [0, 0, -2])


def _random_masks(views, rng, p=0.5):
    return [Mask2D(rng.random((v.height, v.width)) < p) for v in views]


def test_vote_all_full_masks_70_views():
    views = ring_views(70, image_size=32)
    grid = VoxelGrid.full(6)
    counts = vote(grid, views, [Mask2D.full(32, 32) for _ in views])
    # every cell center is in front of every ring camera and inside its frustum
    assert (counts.counts == 70).all()


def test_vote_empty_masks():
    views = ring_views(5, image_size=16)
    counts = vote(VoxelGrid.full(4), views, [Mask2D.full(16, 16, False) for _ in views])
    assert not counts.counts.any()


def test_vote_left_half_mask():
    bits = np.zeros((128, 128), dtype=bool)
    bits[:, :64] = True
    grid = VoxelGrid.empty(2)
    b = grid.bits.copy()
    b[0, 1, 1] = b[1, 1, 1] = True  # centers at x = -0.25 and +0.25
    grid = grid.with_bits(b)
    u_left = project_point(FRONT, grid.cell_centers([[0, 1, 1]])[0]).u
    u_right = project_point(FRONT, grid.cell_centers([[1, 1, 1]])[0]).u
    assert u_left < 64 <= u_right
    counts = vote(grid, [FRONT], [Mask2D(bits)])
    assert counts.counts[0, 1, 1] == 1 and counts.counts[1, 1, 1] == 0
    assert counts.counts.sum() == 1


def test_vote_out_of_image_and_behind_count_as_miss():
    grid = VoxelGrid.full(4, lo=[-5, -5, -5], hi=[5, 5, 5])
    counts = vote(grid, [FRONT], [Mask2D.full(128, 128)])
    centers = grid.centers().reshape(-1, 3)
    expected = []
    for c in centers:
        z = c[2] + 2
        if z <= 0:
            expected.append(0)
            continue
        u, v = 100 * c[0] / z + 64, 100 * c[1] / z + 64
        expected.append(int(0 <= u < 128 and 0 <= v < 128))
    np.testing.assert_array_equal(counts.counts.reshape(-1), expected)


def test_vote_size_mismatch():
    with pytest.raises(SizeMismatch):
        vote(VoxelGrid.full(2), [FRONT], [])
    with pytest.raises(SizeMismatch):
        vote(VoxelGrid.full(2), [FRONT], [Mask2D.full(10, 10)])


def test_vote_unoccupied_cells_zero_and_parallel_equal():
    rng = np.random.default_rng(0)
    views = ring_views(9, image_size=24)
    masks = _random_masks(views, rng)
    dom = VoxelGrid(rng.random((5, 5, 5)) < 0.4)
    a = vote(dom, views, masks)
    b = vote(dom, views, masks, jobs=4)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert not a.counts[~dom.bits].any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_vote_bounds_and_view_monotone(seed, n):
    rng = np.random.default_rng(seed)
    views = ring_views(n + 1, elevation=float(rng.uniform(-40, 40)), image_size=20)
    masks = _random_masks(views, rng, rng.uniform(0.1, 0.9))
    dom = VoxelGrid(rng.random((4, 4, 4)) < 0.6)
    fewer = vote(dom, views[:n], masks[:n])
    more = vote(dom, views, masks)
    assert fewer.counts.min() >= 0 and fewer.counts.max() <= n
    assert (more.counts >= fewer.counts).all()


def test_threshold_cases():
    assert VoteConfig(0.5, 70).min_count == 35
    assert VoteConfig(1.0, 70).min_count == 70
    assert VoteConfig(0.7, 10).min_count == 7
    counts = np.zeros((2, 2, 2), dtype=int)
    counts[0, 0, :] = [0, 1]
    counts[0, 1, :] = [2, 3]
    kept = threshold_mask(CountGrid(counts, 3), VoteConfig(0.5, 3))
    assert kept.bits[0, 1, 0] and kept.bits[0, 1, 1]
    assert kept.count == 2
    full = threshold_mask(CountGrid(counts, 3), VoteConfig(1.0, 3))
    assert full.count == 1 and full.bits[0, 1, 1]


def test_vote_config_validation():
    for tau in (0, -0.1, 1.5):
        with pytest.raises(ValueError):
            VoteConfig(tau, 3)
    with pytest.raises(ValueError):
        VoteConfig(0.5, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1), st.floats(0.01, 1))
def test_threshold_monotone(seed, a, b):
    lo, hi = sorted((a, b))
    counts = np.random.default_rng(seed).integers(0, 11, size=(3, 3, 3))
    cg = CountGrid(counts, 10)
    m_hi = threshold_mask(cg, VoteConfig(hi, 10)).bits
    m_lo = threshold_mask(cg, VoteConfig(lo, 10)).bits
    assert not (m_hi & ~m_lo).any()


def _single(r=7):
    g = VoxelGrid.empty(r)
    b = g.bits.copy()
    b[3, 3, 3] = True
    return g.with_bits(b)


def test_dilate_single_voxel_ball():
    g = _single()
    w = g.spacing[0]
    plus = dilate_ball(g, 1.0 * w)
    assert plus.count == 7
    offs = plus.occupied() - 3
    assert sorted(np.abs(offs).sum(axis=1).tolist()) == [0] + [1] * 6
    assert dilate_ball(g, 1.4 * w).count == 7
    # centers within 1.5 cells: 6 faces + 12 edges (sqrt 2 = 1.414) + center
    assert dilate_ball(g, 1.5 * w).count == 19
    assert dilate_ball(g, 1.8 * w).count == 27


def test_dilate_pct_identity_and_empty():
    rng = np.random.default_rng(1)
    m = VoxelGrid(rng.random((8, 8, 8)) < 0.1)
    assert np.array_equal(dilate_mask(m, 0).bits, m.bits)
    with pytest.raises(EmptyMask):
        dilate_mask(VoxelGrid.empty(4), 9)


def test_dilate_table_percents_monotone():
    rng = np.random.default_rng(2)
    m = VoxelGrid(rng.random((16, 16, 16)) < 0.02)
    counts = [dilate_mask(m, p).count for p in (0, 9, 18, 27)]
    assert counts == sorted(counts)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 60), st.floats(0, 60))
def test_dilation_monotone(seed, a, b):
    lo, hi = sorted((a, b))
    rng = np.random.default_rng(seed)
    m = VoxelGrid(rng.random((10, 10, 10)) < 0.03)
    if m.count == 0:
        return
    small, big = dilate_mask(m, lo), dilate_mask(m, hi)
    assert not (small.bits & ~big.bits).any()
    assert not (m.bits & ~small.bits).any()
    assert mask_iou(big, m) <= mask_iou(small, m)


def test_iou_cases():
    g = VoxelGrid.empty(4)
    a = g.bits.copy()
    a[:2, :2, :2] = True
    b = g.bits.copy()
    b[:2, :2, :] = True
    assert mask_iou(g.with_bits(a), g.with_bits(a)) == 1.0
    assert mask_iou(g.with_bits(a), g.with_bits(b)) == 8 / 16 == 0.5
    c = g.bits.copy()
    c[3, 3, 3] = True
    assert mask_iou(g.with_bits(a), g.with_bits(c)) == 0.0
    assert mask_iou(g, g) == 1.0
    with pytest.raises(DomainMismatch):
        mask_iou(g, VoxelGrid.empty(5))
