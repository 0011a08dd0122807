"""Candidate-pose deduplication and character/pose pair assembly."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import PoolTooSmall, WidthMismatch


@dataclass(frozen=True)
class EmbeddingSet:
    ids: tuple[str, ...]
    vectors: np.ndarray  # (n, d) unit rows

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        if len(set(ids)) != len(ids):
            raise ValueError("ids must be unique")
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or len(v) != len(ids):
            raise WidthMismatch("expected one vector row per id")
        norms = np.linalg.norm(v, axis=1)
        if len(v) and np.abs(norms - 1).max() > 1e-6:
            raise ValueError("vectors must be unit length")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "vectors", v)

    @classmethod
    def normalized(cls, ids, vectors) -> "EmbeddingSet":
        v = np.asarray(vectors, dtype=np.float64)
        return cls(ids, v / np.linalg.norm(v, axis=1, keepdims=True))


def _cosines(v: np.ndarray, kept: np.ndarray) -> np.ndarray:
    c = np.clip(kept @ v, -1.0, 1.0)
    # floating dot products of identical unit vectors can land a few ulps off 1
    c[c > 1 - 1e-12] = 1.0
    return c


def greedy_prune(items: EmbeddingSet, sim_threshold: float = 0.9) -> list[str]:
    """Scan ids in order, keeping an item only if it is below the threshold to all kept items.

    Thresholds above 1 behave like 1.
    """
    if sim_threshold < -1:
        raise ValueError("threshold must be at least -1")
    thr = min(float(sim_threshold), 1.0)
    order = sorted(range(len(items.ids)), key=lambda i: items.ids[i])
    kept: list[int] = []
    bank = np.empty((0, items.vectors.shape[1]))
    for i in order:
        v = items.vectors[i]
        if kept and _cosines(v, bank).max() >= thr:
            continue
        kept.append(i)
        bank = items.vectors[kept]
    return [items.ids[i] for i in kept]


def assemble_pairs(characters: Sequence[str], pose_pool: Sequence[str], k: int,
                   seed: int = 0) -> dict:
    """Sample ``k`` distinct poses per character and chain them into before/after pairs.

    Consecutive sampled poses form one pair, so each character yields ``k``
    assets and ``k - 1`` pairs.
    """
    pool = list(pose_pool)
    if len(set(pool)) != len(pool):
        raise ValueError("pose pool has duplicates")
    if k > len(pool):
        raise PoolTooSmall(f"k={k} exceeds pool of {len(pool)}")
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = np.random.default_rng(seed)
    assets, pairs = [], []
    for ch in characters:
        picks = [pool[j] for j in rng.permutation(len(pool))[:k]]
        assets += [{"character": ch, "pose": p} for p in picks]
        pairs += [{"character": ch, "pose_before": a, "pose_after": b} for a, b in zip(picks, picks[1:])]
    return {"seed": seed, "k": k, "characters": len(characters), "pool": len(pool),
            "assets": assets, "pairs": pairs}


def manifest_bytes(manifest: dict) -> bytes:
    return json.dumps(manifest, sort_keys=True, indent=1).encode() + b"\n"
