"""Software rendering and image-space metrics.

Images are ``(H, W, 3)`` uint8 arrays. The rasterizer is a plain z-buffer with
flat two-sided Lambert shading on a white background and no anti-aliasing: a
pixel is covered when its center falls inside (or on the edge of) a projected
triangle.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numba
import numpy as np

from .errors import EmbedderFailure, EmptyMesh, SizeMismatch, TooSmall
from .geom import Mask2D, TriMesh, View, normalize_unit_cube, ring_views, transform_mesh

PSNR_CAP = 99.0
NEAR = 1e-6
DEFAULT_LIGHT = (0.3, 0.8, 0.5)
EVAL_VIEWS = 10
EVAL_ELEVATION = 20.0


@numba.njit(cache=True)
def _raster_kernel(uv, z, shade, color, depth):
    h, w = depth.shape
    for f in range(uv.shape[0]):
        z0, z1, z2 = z[f, 0], z[f, 1], z[f, 2]
        if z0 <= NEAR or z1 <= NEAR or z2 <= NEAR:
            continue
        x0, y0 = uv[f, 0, 0], uv[f, 0, 1]
        x1, y1 = uv[f, 1, 0], uv[f, 1, 1]
        x2, y2 = uv[f, 2, 0], uv[f, 2, 1]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0.0:
            continue
        xmin = max(int(np.floor(min(x0, x1, x2) - 0.5)), 0)
        xmax = min(int(np.ceil(max(x0, x1, x2) - 0.5)), w - 1)
        ymin = max(int(np.floor(min(y0, y1, y2) - 0.5)), 0)
        ymax = min(int(np.ceil(max(y0, y1, y2) - 0.5)), h - 1)
        for py in range(ymin, ymax + 1):
            cy = py + 0.5
            for px in range(xmin, xmax + 1):
                cx = px + 0.5
                w0 = (x2 - x1) * (cy - y1) - (y2 - y1) * (cx - x1)
                w1 = (x0 - x2) * (cy - y2) - (y0 - y2) * (cx - x2)
                w2 = (x1 - x0) * (cy - y0) - (y1 - y0) * (cx - x0)
                if area < 0:
                    w0, w1, w2 = -w0, -w1, -w2
                if w0 < 0 or w1 < 0 or w2 < 0:
                    continue
                s = abs(area)
                inv = (w0 / s) / z0 + (w1 / s) / z1 + (w2 / s) / z2
                d = 1.0 / inv
                if d < depth[py, px]:
                    depth[py, px] = d
                    color[py, px] = shade[f]


def rasterize(mesh: TriMesh, view: View, light=DEFAULT_LIGHT,
              ambient: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Render ``mesh`` from ``view``; returns (RGB image, depth buffer with inf background)."""
    if mesh.n_triangles == 0:
        raise EmptyMesh("nothing to rasterize")
    cam = mesh.vertices @ view.rotation.T + view.translation
    z = cam[:, 2]
    safe = np.where(np.abs(z) < 1e-12, 1e-12, z)
    uv = np.stack([view.fx * cam[:, 0] / safe + view.cx, view.fy * cam[:, 1] / safe + view.cy], axis=1)
    tri = mesh.triangles
    l = np.asarray(light, dtype=np.float64)
    l = l / np.linalg.norm(l)
    shade = ambient + (1 - ambient) * np.abs(mesh.face_normals() @ l)
    color = np.ones((view.height, view.width))
    depth = np.full((view.height, view.width), np.inf)
    _raster_kernel(np.ascontiguousarray(uv[tri]), np.ascontiguousarray(z[tri]),
                   np.ascontiguousarray(shade), color, depth)
    img = np.round(color * 255).astype(np.uint8)
    return np.repeat(img[:, :, None], 3, axis=2), depth


def silhouette(mesh: TriMesh, view: View) -> Mask2D:
    _, depth = rasterize(mesh, view)
    return Mask2D(np.isfinite(depth))


# --------------------------------------------------------------------------
# pixel metrics


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise SizeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    _check_pair(a, b)
    d = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(d * d))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(255.0 ** 2 / mse))


def luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    sw = np.lib.stride_tricks.sliding_window_view
    return sw(sw(x, len(g), axis=0) @ g, len(g), axis=1) @ g


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03,
         win: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows of the luminance channel."""
    _check_pair(a, b)
    x, y = luminance(a), luminance(b)
    if min(x.shape) < win:
        raise TooSmall(f"images must be at least {win} pixels on each side")
    c1, c2 = (k1 * 255) ** 2, (k2 * 255) ** 2
    g = gaussian_window(win, sigma)
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    vx = _filter_valid(x * x, g) - mx * mx
    vy = _filter_valid(y * y, g) - my * my
    cov = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


# --------------------------------------------------------------------------
# embeddings


class EmbedderPort(Protocol):
    name: str
    external: bool

    def embed(self, image: np.ndarray) -> np.ndarray:
        """Unit-norm feature vector of fixed width."""


def image_key(image: np.ndarray) -> str:
    """Content hash used to look up externally computed embeddings."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h = hashlib.sha256(f"{img.shape[0]}x{img.shape[1]}:".encode())
    h.update(img.tobytes())
    return h.hexdigest()


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if not np.isfinite(n) or n == 0:
        raise EmbedderFailure("embedding has zero or non-finite norm")
    return v / n


class ProxyEmbedder:
    """Grayscale thumbnail pushed through a fixed random projection.

    A cheap, deterministic stand-in for a learned image encoder. Its cosines
    track coarse silhouette and shading agreement only.
    """

    name = "proxy"
    external = False

    def __init__(self, seed: int = 0, dim: int = 256, size: int = 32):
        self.size = size
        self.proj = np.random.default_rng(seed).standard_normal((dim, size * size)) / size

    def embed(self, image: np.ndarray) -> np.ndarray:
        from PIL import Image

        gray = Image.fromarray(np.asarray(image, dtype=np.uint8)).convert("L")
        thumb = np.asarray(gray.resize((self.size, self.size), Image.Resampling.BOX), dtype=np.float64)
        return _unit(self.proj @ (thumb.reshape(-1) / 255.0 - 0.5))


class FileEmbedder:
    """Embeddings precomputed elsewhere, stored as ``<image_key>.evk`` files."""

    name = "file"
    external = True

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def embed(self, image: np.ndarray) -> np.ndarray:
        from .tensorio import read_tensor

        path = self.directory / f"{image_key(image)}.evk"
        if not path.exists():
            raise EmbedderFailure(f"no embedding stored for image {path.name}")
        return _unit(read_tensor(path).data.reshape(-1).astype(np.float64))


def parse_embedder(name: str) -> EmbedderPort:
    if name == "proxy":
        return ProxyEmbedder()
    if name.startswith("file:"):
        return FileEmbedder(name.split(":", 1)[1])
    raise ValueError(f"unknown embedder {name!r}")


def embed_cosine(a: np.ndarray, b: np.ndarray, embedder: EmbedderPort) -> float:
    try:
        ea, eb = embedder.embed(a), embedder.embed(b)
    except EmbedderFailure:
        raise
    except Exception as e:  # noqa: BLE001 - any embedder crash is reported uniformly
        raise EmbedderFailure(str(e)) from e
    if ea.shape != eb.shape:
        raise EmbedderFailure("embedder returned vectors of different widths")
    return float(np.clip(np.dot(ea, eb), -1.0, 1.0))


def mean_view_cosine(views_a: Sequence[np.ndarray], views_b: Sequence[np.ndarray],
                     embedder: EmbedderPort) -> float:
    if len(views_a) != len(views_b):
        raise SizeMismatch(f"{len(views_a)} views against {len(views_b)}")
    if not views_a:
        raise SizeMismatch("no views to compare")
    return float(np.mean([embed_cosine(a, b, embedder) for a, b in zip(views_a, views_b)]))


def consistency_filter(pairs, embedder: EmbedderPort, threshold: float) -> list[int]:
    """Indices of pairs whose mean per-view embedding cosine reaches ``threshold``."""
    return [i for i, (a, b) in enumerate(pairs) if mean_view_cosine(a, b, embedder) >= threshold]


# --------------------------------------------------------------------------
# evaluation


def render_views(mesh: TriMesh, views: Sequence[View]) -> list[np.ndarray]:
    return [rasterize(mesh, v)[0] for v in views]


@dataclass(frozen=True)
class Eval2DReport:
    views: int
    psnr: float
    ssim: float
    embed_i: float | None
    dino_i: float | None
    lpips: None = None

    def to_dict(self) -> dict:
        return {"views": self.views, "psnr": self.psnr, "ssim": self.ssim,
                "embed_i": self.embed_i, "dino_i": self.dino_i, "lpips": self.lpips}


def eval_2d(pred: TriMesh, gt: TriMesh, embedder: EmbedderPort | None = None,
            n_views: int = EVAL_VIEWS, image_size: int = 128) -> Eval2DReport:
    """Render both meshes (in gt's unit-cube frame) from a fixed camera ring and compare."""
    embedder = embedder or ProxyEmbedder()
    _, tf = normalize_unit_cube(gt)
    views = ring_views(n_views, elevation=EVAL_ELEVATION, image_size=image_size)
    ia = render_views(transform_mesh(pred, tf), views)
    ib = render_views(transform_mesh(gt, tf), views)
    p = float(np.mean([psnr(a, b) for a, b in zip(ia, ib)]))
    s = float(np.mean([ssim(a, b) for a, b in zip(ia, ib)]))
    e = mean_view_cosine(ia, ib, embedder)
    if embedder.external:
        return Eval2DReport(n_views, p, s, None, e)
    return Eval2DReport(n_views, p, s, e, None)
