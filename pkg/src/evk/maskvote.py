"""Lifting per-view 2D edit masks to a 3D voxel mask.

Each occupied cell of a domain grid is projected into every view with the
pinhole model, counted once per view whose mask contains the projection,
and kept when the count reaches a fraction of the view total.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainMismatch, EmptyMask, SizeMismatch, ZeroDepth
from .geom import CountGrid, Mask2D, View, VoxelGrid


@dataclass(frozen=True)
class VoteConfig:
    tau: float = 0.5
    n_views: int = 70

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.n_views < 1:
            raise ValueError("n_views must be at least 1")

    @property
    def min_count(self) -> int:
        # rounding guards against products like 0.7 * 10 = 7.000000000000001
        return math.ceil(round(self.tau * self.n_views, 9))


class Projection(NamedTuple):
    u: float
    v: float
    depth: float
    behind: bool


def project_point(view: View, p) -> Projection:
    cam = view.rotation @ np.asarray(p, dtype=np.float64) + view.translation
    z = float(cam[2])
    if abs(z) < 1e-12:
        raise ZeroDepth("point lies in the camera plane")
    return Projection(view.fx * cam[0] / z + view.cx, view.fy * cam[1] / z + view.cy, z, z <= 0)


def project_points(view: View, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection; returns (u, v, depth). Zero depth yields nan pixels."""
    cam = pts @ view.rotation.T + view.translation
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(np.abs(z) < 1e-12, np.nan, view.fx * cam[:, 0] / z + view.cx)
        v = np.where(np.abs(z) < 1e-12, np.nan, view.fy * cam[:, 1] / z + view.cy)
    return u, v, z


def mask_hits(view: View, mask: Mask2D, pts: np.ndarray) -> np.ndarray:
    """Indicator of each point projecting into ``mask``; misses off-image or behind."""
    u, v, z = project_points(view, pts)
    ok = (z > 0) & np.isfinite(u) & np.isfinite(v)
    col = np.floor(np.where(ok, u, -1)).astype(np.int64)
    row = np.floor(np.where(ok, v, -1)).astype(np.int64)
    ok &= (col >= 0) & (col < mask.width) & (row >= 0) & (row < mask.height)
    hit = np.zeros(len(pts), dtype=bool)
    hit[ok] = mask.bits[row[ok], col[ok]]
    return hit


def vote(domain: VoxelGrid, views: Sequence[View], masks: Sequence[Mask2D], jobs: int = 1) -> CountGrid:
    """Count, per occupied domain cell, the views whose mask contains its center."""
    if len(views) != len(masks):
        raise SizeMismatch(f"{len(views)} views but {len(masks)} masks")
    for i, (vw, m) in enumerate(zip(views, masks)):
        if (m.width, m.height) != (vw.width, vw.height):
            raise SizeMismatch(f"mask {i} is {m.width}x{m.height}, view is {vw.width}x{vw.height}")
    cells = domain.occupied()
    pts = domain.cell_centers(cells)

    def one(i: int) -> np.ndarray:
        return mask_hits(views[i], masks[i], pts).astype(np.int64)

    total = np.zeros(len(cells), dtype=np.int64)
    if jobs > 1 and len(views) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            for part in pool.map(one, range(len(views))):
                total += part
    else:
        for i in range(len(views)):
            total += one(i)
    counts = np.zeros(domain.bits.shape, dtype=np.int64)
    counts[cells[:, 0], cells[:, 1], cells[:, 2]] = total
    return CountGrid(counts, len(views), domain.lo, domain.hi)


def threshold_mask(counts: CountGrid, cfg: VoteConfig) -> VoxelGrid:
    if counts.n_views != cfg.n_views:
        raise SizeMismatch(f"counts use {counts.n_views} views, config says {cfg.n_views}")
    return VoxelGrid(counts.counts >= cfg.min_count, counts.lo, counts.hi)


def bounding_sphere(mask: VoxelGrid) -> tuple[np.ndarray, float]:
    """Center and radius of a sphere enclosing all occupied cell centers."""
    cells = mask.occupied()
    if not len(cells):
        raise EmptyMask("mask has no occupied cells")
    pts = mask.cell_centers(cells)
    center = (pts.min(axis=0) + pts.max(axis=0)) / 2
    return center, float(np.linalg.norm(pts - center, axis=1).max())


def dilate_ball(mask: VoxelGrid, radius: float) -> VoxelGrid:
    """Set every cell whose center lies within ``radius`` of an occupied center."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    step = mask.spacing
    reach = np.floor(radius / step + 1e-9).astype(int)
    rng = [np.arange(-k, k + 1) for k in reach]
    offs = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, 3)
    dist = np.linalg.norm(offs * step, axis=1)
    offs = offs[dist <= radius * (1 + 1e-12)]
    src = mask.bits
    out = src.copy()
    r = mask.resolution
    for dx, dy, dz in offs:
        if dx == dy == dz == 0:
            continue
        dst = tuple(slice(max(d, 0), r + min(d, 0)) for d in (dx, dy, dz))
        sel = tuple(slice(max(-d, 0), r - max(d, 0)) for d in (dx, dy, dz))
        out[dst] |= src[sel]
    return mask.with_bits(out)


def dilate_mask(mask: VoxelGrid, radius_pct: float) -> VoxelGrid:
    """Grow the mask by ``radius_pct`` percent of its bounding-sphere radius."""
    if radius_pct < 0:
        raise ValueError("radius_pct must be non-negative")
    _, rad = bounding_sphere(mask)
    if radius_pct == 0:
        return mask
    return dilate_ball(mask, rad * radius_pct / 100.0)


def mask_iou(a: VoxelGrid, b: VoxelGrid) -> float:
    if not a.same_domain(b):
        raise DomainMismatch("masks live on different lattices")
    union = int((a.bits | b.bits).sum())
    if union == 0:
        return 1.0
    return int((a.bits & b.bits).sum()) / union
