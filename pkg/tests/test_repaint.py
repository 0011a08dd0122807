import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evk.errors import DenoiserFailure, DimMismatch
from evk.geom import VoxelGrid
from evk.repaint import (
    LinearDenoiser, Schedule, cfm_loss, fuse, identity_denoiser, interpolate, noisy_source,
    repaint_run, zero_denoiser,
)

R, C = 4, 3


def lat(rng, c=C, r=R):
    return rng.standard_normal((c, r, r, r)).astype(np.float32)


def half_mask(r=R):
    g = VoxelGrid.empty(r)
    b = g.bits.copy()
    b[: r // 2] = True
    return g.with_bits(b)


def test_interpolate_endpoints_and_midpoint():
    rng = np.random.default_rng(0)
    a, b = lat(rng), lat(rng)
    assert np.array_equal(interpolate(a, b, 0.0), a)
    assert np.array_equal(interpolate(a, b, 1.0), b)
    z = np.zeros((2, 2, 2, 2), dtype=np.float32)
    np.testing.assert_array_equal(interpolate(z, z + 2, 0.5), z + 1)


def test_noisy_source_values():
    four = np.full((1, 2, 2, 2), 4, dtype=np.float32)
    zero = np.zeros_like(four)
    assert np.array_equal(noisy_source(four, zero, 0.0), four)
    assert np.array_equal(noisy_source(four, zero, 1.0), zero)
    np.testing.assert_array_equal(noisy_source(four, zero, 0.25), np.full_like(four, 3))


def test_dim_mismatch():
    with pytest.raises(DimMismatch):
        interpolate(np.zeros((1, 2, 2, 2)), np.zeros((1, 3, 3, 3)), 0.5)
    with pytest.raises(DimMismatch):
        fuse(np.zeros((1, 2, 2, 2)), np.zeros((1, 2, 2, 2)), VoxelGrid.empty(3))
    with pytest.raises(DimMismatch):
        cfm_loss(np.zeros(3), np.zeros(3), np.zeros(4))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 1000), st.floats(0, 1))
def test_interpolate_linearity(seed, t):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((2, 3, 3, 3))
    b = rng.standard_normal((2, 3, 3, 3))
    np.testing.assert_allclose(interpolate(a, b, t) + interpolate(b, a, t), a + b, atol=1e-12)


def test_fuse_cases():
    ones = np.ones((2, R, R, R), dtype=np.float32)
    fives = 5 * ones
    assert np.array_equal(fuse(ones, fives, VoxelGrid.full(R)), ones)
    assert np.array_equal(fuse(ones, fives, VoxelGrid.empty(R)), fives)
    out = fuse(ones, fives, half_mask())
    assert (out[:, : R // 2] == 1).all() and (out[:, R // 2:] == 5).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_fuse_partition(seed):
    rng = np.random.default_rng(seed)
    z = lat(rng)
    m = VoxelGrid(rng.random((R, R, R)) < 0.5)
    assert np.array_equal(fuse(z, z, m), z)


def test_schedule():
    s = Schedule.linear(25)
    assert s.steps == 25 and s.timesteps[0] == 1.0
    assert list(s.pairs())[-1][1] == 0.0
    for bad in ([0.5, 0.5], [0.0], [1.2], []):
        with pytest.raises(ValueError):
            Schedule(tuple(bad))


DENOISERS = {
    "zero": lambda x0: zero_denoiser,
    "identity": lambda x0: identity_denoiser,
    "linear": lambda x0: LinearDenoiser(x0),
}


@pytest.mark.parametrize("name", list(DENOISERS))
def test_zero_mask_returns_source(name):
    rng = np.random.default_rng(3)
    src, x0 = lat(rng), lat(rng)
    out = repaint_run(DENOISERS[name](x0), src, VoxelGrid.empty(R), Schedule.linear(25), seed=5)
    assert np.array_equal(out.latent, src)


def test_full_mask_identity_independent_of_source():
    rng = np.random.default_rng(4)
    a = repaint_run(identity_denoiser, lat(rng), VoxelGrid.full(R), Schedule.linear(10), seed=8).latent
    b = repaint_run(identity_denoiser, lat(rng), VoxelGrid.full(R), Schedule.linear(10), seed=8).latent
    assert np.array_equal(a, b)


def test_linear_denoiser_reaches_target_inside_mask():
    rng = np.random.default_rng(5)
    src, x0 = lat(rng), lat(rng)
    m = half_mask()
    out = repaint_run(LinearDenoiser(x0), src, m, Schedule.linear(10), seed=1).latent
    inside = m.bits[None].repeat(C, 0)
    # exact Euler integration of a straight path; only float32 rounding remains
    assert np.abs(out[inside] - x0[inside]).max() < 1e-5
    assert np.array_equal(out[~inside], src[~inside])


@pytest.mark.parametrize("name", list(DENOISERS))
def test_outside_mask_anchored_every_step(name):
    rng = np.random.default_rng(6)
    src, x0 = lat(rng), lat(rng)
    m = VoxelGrid(rng.random((R, R, R)) < 0.5)
    res = repaint_run(DENOISERS[name](x0), src, m, Schedule.linear(25), seed=2, keep_trajectory=True)
    out = ~m.bits[None].repeat(C, 0)
    assert len(res.trajectory) == 25
    for t, z in res.trajectory:
        assert np.array_equal(z[out], noisy_source(src, res.eps, t)[out])


def test_repaint_deterministic_and_fresh_noise_mode():
    rng = np.random.default_rng(7)
    src = lat(rng)
    m = half_mask()
    a = repaint_run(identity_denoiser, src, m, Schedule.linear(5), seed=9).latent
    b = repaint_run(identity_denoiser, src, m, Schedule.linear(5), seed=9).latent
    assert a.tobytes() == b.tobytes()
    f1 = repaint_run(zero_denoiser, src, VoxelGrid.empty(R), Schedule.linear(5), seed=9, noise="fresh").latent
    assert np.array_equal(f1, src)


def test_denoiser_failures():
    src = np.zeros((1, 2, 2, 2), dtype=np.float32)
    with pytest.raises(DenoiserFailure):
        repaint_run(lambda x, t, c: x + np.nan, src, VoxelGrid.full(2), Schedule.linear(3))
    with pytest.raises(DimMismatch):
        repaint_run(lambda x, t, c: x[:, :1], src, VoxelGrid.full(2), Schedule.linear(3))
    with pytest.raises(DimMismatch):
        repaint_run(zero_denoiser, src, VoxelGrid.full(3), Schedule.linear(3))


def test_condition_passed_through():
    seen = []

    def spy(x, t, cond):
        seen.append(cond)
        return np.zeros_like(x)

    repaint_run(spy, np.zeros((1, 2, 2, 2), np.float32), VoxelGrid.full(2), Schedule.linear(3), b"\x00abc")
    assert seen == [b"\x00abc"] * 3


def test_cfm_loss_cases():
    rng = np.random.default_rng(8)
    x0, eps = rng.standard_normal((2, 5)), rng.standard_normal((2, 5))
    assert cfm_loss(eps - x0, eps, x0) == 0.0
    z = np.zeros((3, 4))
    assert cfm_loss(z + 1.5, z, z) == 1.5 ** 2


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 300))
def test_cfm_loss_matches_naive_sum(seed, n):
    rng = np.random.default_rng(seed)
    pred, eps, x0 = (rng.standard_normal(n) for _ in range(3))
    naive = 0.0
    for p, e, x in zip(pred.tolist(), eps.tolist(), x0.tolist()):
        naive += (p - (e - x)) ** 2
    naive /= n
    got = cfm_loss(pred, eps, x0)
    assert math.isclose(got, naive, rel_tol=1e-12)
    assert got >= 0
