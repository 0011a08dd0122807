"""Mask-guided latent repainting over a rectified-flow trajectory.

Latents are float32 arrays shaped ``(C, R, R, R)``; masks are voxel grids on
the same ``R``. Noising follows the straight path ``x(t) = (1 - t) x0 + t eps``
and the sampler integrates the predicted velocity ``dx/dt`` with explicit Euler
steps from t = 1 down to t = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .errors import DenoiserFailure, DimMismatch
from .geom import VoxelGrid


class DenoiserPort(Protocol):
    def __call__(self, latent: np.ndarray, t: float, condition: bytes | None) -> np.ndarray:
        """Velocity prediction with the same shape as ``latent``."""


@dataclass(frozen=True)
class Schedule:
    timesteps: tuple[float, ...]

    def __post_init__(self):
        ts = tuple(float(t) for t in self.timesteps)
        if not ts:
            raise ValueError("schedule needs at least one step")
        if any(not 0 < t <= 1 for t in ts):
            raise ValueError("timesteps must lie in (0, 1]")
        if any(b >= a for a, b in zip(ts, ts[1:])):
            raise ValueError("timesteps must be strictly decreasing")
        object.__setattr__(self, "timesteps", ts)

    @classmethod
    def linear(cls, steps: int = 25) -> "Schedule":
        """``steps`` evenly spaced times from 1 down to 1/steps; the last step lands on 0."""
        if steps < 1:
            raise ValueError("steps must be at least 1")
        return cls(tuple(1.0 - k / steps for k in range(steps)))

    @property
    def steps(self) -> int:
        return len(self.timesteps)

    def pairs(self):
        nxt = self.timesteps[1:] + (0.0,)
        return zip(self.timesteps, nxt)


def _same(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimMismatch(f"shape {a.shape} != {b.shape}")


def interpolate(x0: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    _same(x0, eps)
    if not 0 <= t <= 1:
        raise ValueError("t must lie in [0, 1]")
    dt = np.result_type(x0, eps)
    return (dt.type(1 - t) * x0 + dt.type(t) * eps).astype(dt, copy=False)


def noisy_source(src: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    return interpolate(src, eps, t)


def _mask_for(latent: np.ndarray, mask: VoxelGrid) -> np.ndarray:
    if latent.ndim != 4 or latent.shape[1:] != mask.bits.shape:
        raise DimMismatch(f"latent {latent.shape} does not sit on a {mask.bits.shape} lattice")
    return mask.bits[None]


def fuse(z_tgt: np.ndarray, z_src: np.ndarray, mask: VoxelGrid) -> np.ndarray:
    """Target values inside the mask, source values outside, for every channel."""
    _same(z_tgt, z_src)
    return np.where(_mask_for(z_tgt, mask), z_tgt, z_src)


def cfm_loss(pred: np.ndarray, eps: np.ndarray, x0: np.ndarray) -> float:
    """Mean squared error between a velocity prediction and ``eps - x0``."""
    _same(pred, eps)
    _same(pred, x0)
    diff = np.asarray(pred, dtype=np.float64) - (np.asarray(eps, dtype=np.float64) - np.asarray(x0, dtype=np.float64))
    return float(np.mean(diff * diff))


# --------------------------------------------------------------------------
# built-in denoisers


def zero_denoiser(latent, t, condition=None):
    return np.zeros_like(latent)


def identity_denoiser(latent, t, condition=None):
    return latent.copy()


@dataclass(frozen=True)
class LinearDenoiser:
    """Exact straight-path velocity toward a known clean latent.

    On the path through ``x0`` the velocity ``eps - x0`` equals ``(x - x0) / t``,
    which needs no knowledge of ``eps``.
    """

    x0: np.ndarray

    def __call__(self, latent, t, condition=None):
        _same(latent, self.x0)
        return ((latent - self.x0) / latent.dtype.type(t)).astype(latent.dtype, copy=False)


# --------------------------------------------------------------------------
# sampler


@dataclass
class RepaintResult:
    latent: np.ndarray
    eps: np.ndarray
    trajectory: list[tuple[float, np.ndarray]] = field(default_factory=list)


def repaint_run(denoiser: DenoiserPort | Callable, src: np.ndarray, mask: VoxelGrid,
                schedule: Schedule, condition: bytes | None = None, seed: int = 0,
                noise: str = "shared", keep_trajectory: bool = False) -> RepaintResult:
    """Generate inside ``mask`` while anchoring everything else to the noised source.

    ``noise="shared"`` draws one noise tensor per run and reuses it for the start
    point and every source re-noising; ``noise="fresh"`` redraws the source noise
    at every step. Each step takes an Euler velocity step on the fused latent,
    re-noises the source to the new time and fuses the two.
    """
    src = np.asarray(src, dtype=np.float32)
    _mask_for(src, mask)
    if noise not in ("shared", "fresh"):
        raise ValueError(f"unknown noise mode {noise!r}")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(src.shape).astype(np.float32)
    z = eps.copy()
    traj: list[tuple[float, np.ndarray]] = []
    for t, t_next in schedule.pairs():
        vel = np.asarray(denoiser(z, t, condition))
        if vel.shape != z.shape:
            raise DimMismatch(f"denoiser returned {vel.shape}, expected {z.shape}")
        if not np.isfinite(vel).all():
            raise DenoiserFailure(f"non-finite velocity at t={t}")
        z_tgt = (z + np.float32(t_next - t) * vel.astype(np.float32)).astype(np.float32)
        step_eps = eps if noise == "shared" else rng.standard_normal(src.shape).astype(np.float32)
        z = fuse(z_tgt, noisy_source(src, step_eps, t_next), mask)
        if keep_trajectory:
            traj.append((t_next, z.copy()))
    return RepaintResult(z, eps, traj)


def parse_denoiser(name: str) -> DenoiserPort:
    """``zero``, ``identity`` or ``linear:<tensor file>``."""
    if name == "zero":
        return zero_denoiser
    if name == "identity":
        return identity_denoiser
    if name.startswith("linear:"):
        from .tensorio import read_tensor

        return LinearDenoiser(read_tensor(name.split(":", 1)[1]).data)
    raise ValueError(f"unknown denoiser {name!r}")
