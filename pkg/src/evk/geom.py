"""Geometry substrate: meshes, point clouds, cameras, masks and voxel lattices.

Conventions used everywhere in the package:

* world space is right-handed with +Y up;
* cameras follow the pinhole model with the camera looking down +Z of its own
  frame, +X to the right and +Y down, so image pixel (0, 0) is the top-left
  corner and a camera-frame point projects to ``(fx*X/Z + cx, fy*Y/Z + cy)``;
* voxel grids are indexed ``[x, y, z]`` and flattened as ``(x*R + y)*R + z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateExtent, EmptyMesh, ParseError

UNIT_BOUNDS = (np.full(3, -0.5), np.full(3, 0.5))


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (F, 3) int64
    normals: np.ndarray | None = None  # (V, 3) unit vectors
    dropped: int = 0  # degenerate faces removed at construction

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ParseError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != len(v):
                raise ParseError("normal count does not match vertex count")
            norm = np.linalg.norm(n, axis=1, keepdims=True)
            norm[norm == 0] = 1.0
            object.__setattr__(self, "normals", n / norm)

    @classmethod
    def from_arrays(cls, vertices, triangles, normals=None) -> "TriMesh":
        """Build a mesh, dropping degenerate faces and counting them."""
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ParseError("triangle index out of range")
        keep = _nondegenerate(v, f)
        return cls(v, f[keep], normals, int((~keep).sum()))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self) -> np.ndarray:
        """Triangle corners as an (F, 3, 3) array."""
        return self.vertices[self.triangles]

    def face_areas(self) -> np.ndarray:
        c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def face_normals(self) -> np.ndarray:
        c = self.corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def _nondegenerate(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    if not len(f):
        return np.zeros(0, dtype=bool)
    c = v[f]
    cross = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    area2 = np.linalg.norm(cross, axis=1)
    extent = np.ptp(v, axis=0).max() if len(v) else 0.0
    distinct = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
    return distinct & (area2 > 1e-12 * extent * extent)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # (n, 3)
    normals: np.ndarray | None = None  # (n, 3) unit

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", p)
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != len(p):
                raise ValueError("points and normals differ in length")
            object.__setattr__(self, "normals", n)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class Transform:
    """Uniform scale about a shift: ``x' = (x + offset) * scale``."""

    scale: float
    offset: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) + self.offset) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale - self.offset


@dataclass(frozen=True, eq=False)
class View:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(repr=False)
    translation: np.ndarray = field(repr=False)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera position in world space."""
        return -self.rotation.T @ self.translation

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "R": self.rotation.reshape(-1).tolist(), "t": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "View":
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       int(d["width"]), int(d["height"]),
                       np.asarray(d["R"], dtype=np.float64).reshape(3, 3),
                       np.asarray(d["t"], dtype=np.float64).reshape(3))
        except (KeyError, TypeError) as e:
            raise ParseError(f"bad view record: {e}") from e


@dataclass(frozen=True, eq=False)
class Mask2D:
    bits: np.ndarray  # (height, width) bool, row-major

    def __post_init__(self):
        b = np.asarray(self.bits).astype(bool)
        if b.ndim != 2:
            raise ValueError("mask must be two-dimensional")
        object.__setattr__(self, "bits", b)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @classmethod
    def full(cls, width: int, height: int, value: bool = True) -> "Mask2D":
        return cls(np.full((height, width), value, dtype=bool))


class _Lattice:
    resolution: int
    lo: np.ndarray
    hi: np.ndarray

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / self.resolution

    def centers(self) -> np.ndarray:
        """World-space centers of all cells, shape (R, R, R, 3)."""
        r = self.resolution
        idx = np.stack(np.meshgrid(np.arange(r), np.arange(r), np.arange(r), indexing="ij"), axis=-1)
        return self.lo + (idx + 0.5) * self.spacing

    def cell_centers(self, cells: np.ndarray) -> np.ndarray:
        return self.lo + (np.asarray(cells) + 0.5) * self.spacing

    def same_domain(self, other: "_Lattice") -> bool:
        return (self.resolution == other.resolution and np.array_equal(self.lo, other.lo)
                and np.array_equal(self.hi, other.hi))


def _check_bounds(resolution: int, lo, hi):
    lo = np.asarray(lo, dtype=np.float64).reshape(3)
    hi = np.asarray(hi, dtype=np.float64).reshape(3)
    if resolution < 1:
        raise ValueError("resolution must be positive")
    if not np.all(hi > lo):
        raise DegenerateExtent("grid bounds are degenerate")
    return lo, hi


@dataclass(frozen=True, eq=False)
class VoxelGrid(_Lattice):
    bits: np.ndarray  # (R, R, R) bool
    lo: np.ndarray = field(default_factory=lambda: UNIT_BOUNDS[0].copy())
    hi: np.ndarray = field(default_factory=lambda: UNIT_BOUNDS[1].copy())

    def __post_init__(self):
        b = np.asarray(self.bits).astype(bool)
        if b.ndim != 3 or len(set(b.shape)) != 1:
            raise ValueError("voxel bits must be a cube (R, R, R)")
        lo, hi = _check_bounds(b.shape[0], self.lo, self.hi)
        object.__setattr__(self, "bits", b)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def resolution(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def empty(cls, resolution: int, lo=None, hi=None) -> "VoxelGrid":
        lo = UNIT_BOUNDS[0] if lo is None else lo
        hi = UNIT_BOUNDS[1] if hi is None else hi
        return cls(np.zeros((resolution,) * 3, dtype=bool), lo, hi)

    @classmethod
    def full(cls, resolution: int, lo=None, hi=None) -> "VoxelGrid":
        g = cls.empty(resolution, lo, hi)
        return cls(~g.bits, g.lo, g.hi)

    def with_bits(self, bits: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(bits, self.lo, self.hi)

    def occupied(self) -> np.ndarray:
        """Occupied cell indices, (K, 3), in flat-index order."""
        return np.argwhere(self.bits)


@dataclass(frozen=True, eq=False)
class CountGrid(_Lattice):
    counts: np.ndarray  # (R, R, R) non-negative int
    n_views: int
    lo: np.ndarray = field(default_factory=lambda: UNIT_BOUNDS[0].copy())
    hi: np.ndarray = field(default_factory=lambda: UNIT_BOUNDS[1].copy())

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 3:
            raise ValueError("counts must be (R, R, R)")
        if c.min(initial=0) < 0 or c.max(initial=0) > self.n_views:
            raise ValueError("counts must lie in [0, n_views]")
        lo, hi = _check_bounds(c.shape[0], self.lo, self.hi)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def resolution(self) -> int:
        return self.counts.shape[0]


# --------------------------------------------------------------------------
# mesh files


def load_mesh(path: str | Path) -> TriMesh:
    """Read an ASCII OBJ or binary little-endian PLY file.

    Polygons are fan-triangulated. Faces that collapse to zero area are
    dropped and counted in ``TriMesh.dropped``.
    """
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(b"ply"):
        mesh = _parse_ply(data)
    else:
        mesh = _parse_obj(data.decode("utf-8", errors="replace"))
    if mesh.n_triangles == 0:
        raise EmptyMesh(f"{path}: no valid triangles")
    return mesh


def _obj_index(tok: str, n: int) -> int:
    head = tok.split("/", 1)[0]
    try:
        i = int(head)
    except ValueError:
        raise ParseError(f"bad face index {tok!r}") from None
    if i == 0:
        raise ParseError("OBJ indices are 1-based")
    return i - 1 if i > 0 else n + i


def _parse_obj(text: str) -> TriMesh:
    verts, normals, faces = [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        try:
            if tag == "v":
                if len(parts) < 4:
                    raise ParseError(f"line {lineno}: vertex needs 3 coordinates")
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "vn":
                if len(parts) < 4:
                    raise ParseError(f"line {lineno}: normal needs 3 components")
                normals.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                if len(parts) < 4:
                    raise ParseError(f"line {lineno}: face needs at least 3 vertices")
                idx = [_obj_index(p, len(verts)) for p in parts[1:]]
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
        except ValueError as e:
            raise ParseError(f"line {lineno}: {e}") from None
    if not verts:
        raise ParseError("no vertices")
    if faces and (min(min(f) for f in faces) < 0 or max(max(f) for f in faces) >= len(verts)):
        raise ParseError("face index out of range")
    vn = np.asarray(normals) if len(normals) == len(verts) else None
    return TriMesh.from_arrays(np.asarray(verts), np.asarray(faces, dtype=np.int64).reshape(-1, 3), vn)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}


def _parse_ply(data: bytes) -> TriMesh:
    end = data.find(b"end_header\n")
    if end < 0:
        raise ParseError("PLY header not terminated")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n"):]
    if "format binary_little_endian 1.0" not in [h.strip() for h in header]:
        raise ParseError("only binary_little_endian PLY is supported")
    elements: list[tuple[str, int, list]] = []
    for h in header[1:]:
        p = h.split()
        if not p or p[0] in ("format", "comment", "obj_info"):
            continue
        if p[0] == "element":
            elements.append((p[1], int(p[2]), []))
        elif p[0] == "property":
            if not elements:
                raise ParseError("property before element")
            if p[1] == "list":
                elements[-1][2].append(("list", p[4], _PLY_TYPES[p[2]], _PLY_TYPES[p[3]]))
            else:
                if p[1] not in _PLY_TYPES:
                    raise ParseError(f"unknown PLY type {p[1]}")
                elements[-1][2].append(("scalar", p[2], _PLY_TYPES[p[1]]))
    verts = normals = None
    faces: list = []
    off = 0
    try:
        for name, count, props in elements:
            if all(pr[0] == "scalar" for pr in props):
                dt = np.dtype([(pr[1], pr[2]) for pr in props])
                need = dt.itemsize * count
                if off + need > len(body):
                    raise ParseError("PLY body truncated")
                arr = np.frombuffer(body, dtype=dt, count=count, offset=off)
                off += need
                if name == "vertex":
                    verts = np.stack([arr[c].astype(np.float64) for c in "xyz"], axis=1)
                    if all(c in dt.names for c in ("nx", "ny", "nz")):
                        normals = np.stack([arr[c].astype(np.float64) for c in ("nx", "ny", "nz")], axis=1)
                continue
            # elements with list properties are walked record by record
            for _ in range(count):
                for pr in props:
                    if pr[0] == "scalar":
                        off += np.dtype(pr[2]).itemsize
                        continue
                    ct, it = np.dtype(pr[2]), np.dtype(pr[3])
                    if off + ct.itemsize > len(body):
                        raise ParseError("PLY body truncated")
                    k = int(np.frombuffer(body, dtype=ct, count=1, offset=off)[0])
                    off += ct.itemsize
                    if off + k * it.itemsize > len(body):
                        raise ParseError("PLY body truncated")
                    idx = np.frombuffer(body, dtype=it, count=k, offset=off).astype(np.int64)
                    off += k * it.itemsize
                    if name == "face" and pr[1] in ("vertex_indices", "vertex_index"):
                        for j in range(1, k - 1):
                            faces.append((idx[0], idx[j], idx[j + 1]))
    except (ValueError, KeyError) as e:
        raise ParseError(str(e)) from None
    if verts is None:
        raise ParseError("PLY has no vertex element")
    return TriMesh.from_arrays(verts, np.asarray(faces, dtype=np.int64).reshape(-1, 3), normals)


def save_obj(mesh: TriMesh, path: str | Path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def save_ply(mesh: TriMesh, path: str | Path) -> None:
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {mesh.n_triangles}\n"
        "property list uchar int vertex_indices\nend_header\n"
    ).encode("ascii")
    faces = np.empty(mesh.n_triangles, dtype=[("n", "u1"), ("idx", "<i4", 3)])
    faces["n"] = 3
    faces["idx"] = mesh.triangles
    Path(path).write_bytes(header + mesh.vertices.astype("<f8").tobytes() + faces.tobytes())


# --------------------------------------------------------------------------
# mesh operations


def normalize_unit_cube(mesh: TriMesh) -> tuple[TriMesh, Transform]:
    """Center the bounding box at the origin and fit its longest side to 1."""
    if mesh.n_vertices == 0:
        raise EmptyMesh("mesh has no vertices")
    lo, hi = mesh.bounds()
    extent = float((hi - lo).max())
    if extent <= 0:
        raise DegenerateExtent("bounding box has zero size")
    tf = Transform(1.0 / extent, -(lo + hi) / 2)
    return transform_mesh(mesh, tf), tf


def transform_mesh(mesh: TriMesh, tf: Transform) -> TriMesh:
    return TriMesh(tf.apply(mesh.vertices), mesh.triangles, mesh.normals, mesh.dropped)


def sample_surface(mesh: TriMesh, n: int, seed: int | Sequence[int]) -> PointCloud:
    """Area-weighted uniform surface samples carrying their face normals."""
    if n < 1:
        raise ValueError("n must be at least 1")
    areas = mesh.face_areas() if mesh.n_triangles else np.zeros(0)
    total = areas.sum()
    if not mesh.n_triangles or total <= 0:
        raise EmptyMesh("no triangle with positive area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas) / total
    face = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(areas) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    c = mesh.corners()[face]
    pts = ((1 - r1)[:, None] * c[:, 0] + (r1 * (1 - r2))[:, None] * c[:, 1]
           + (r1 * r2)[:, None] * c[:, 2])
    return PointCloud(pts, mesh.face_normals()[face])


def _tri_box_overlap(tri: np.ndarray, centers: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Separating-axis triangle/box test, inclusive of touching contact.

    ``tri`` is (3, 3); ``centers`` is (K, 3); returns a (K,) bool array.
    """
    v = tri[None, :, :] - centers[:, None, :]  # (K, 3, 3)
    e = np.array([tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2]])
    hit = np.ones(len(centers), dtype=bool)
    # box face normals
    for ax in range(3):
        lo = v[:, :, ax].min(axis=1)
        hi = v[:, :, ax].max(axis=1)
        hit &= (lo <= half[ax]) & (hi >= -half[ax])
    # triangle plane
    n = np.cross(e[0], e[1])
    d = v[:, 0, :] @ n
    r = np.abs(n) @ half
    hit &= np.abs(d) <= r
    # edge cross products
    for ej in e:
        for ax in range(3):
            a = np.zeros(3)
            a[(ax + 1) % 3] = -ej[(ax + 2) % 3]
            a[(ax + 2) % 3] = ej[(ax + 1) % 3]
            if not a.any():
                continue
            p = v @ a
            r = np.abs(a) @ half
            hit &= (p.min(axis=1) <= r) & (p.max(axis=1) >= -r)
    return hit


def voxelize(mesh: TriMesh, resolution: int, lo=None, hi=None,
             fill_interior: bool = False) -> VoxelGrid:
    """Conservative surface voxelization: a cell is set iff a triangle touches it."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    if mesh.n_triangles == 0:
        raise EmptyMesh("nothing to voxelize")
    grid = VoxelGrid.empty(resolution, lo, hi)
    step = grid.spacing
    half = step / 2
    bits = np.zeros((resolution,) * 3, dtype=bool)
    for tri in mesh.corners():
        a = np.floor((tri.min(axis=0) - grid.lo) / step).astype(int) - 1
        b = np.floor((tri.max(axis=0) - grid.lo) / step).astype(int) + 1
        a = np.clip(a, 0, resolution - 1)
        b = np.clip(b, 0, resolution - 1)
        if np.any((tri.max(axis=0) < grid.lo) | (tri.min(axis=0) > grid.hi)):
            continue
        cells = np.stack(np.meshgrid(*[np.arange(a[k], b[k] + 1) for k in range(3)],
                                     indexing="ij"), axis=-1).reshape(-1, 3)
        hit = _tri_box_overlap(tri, grid.lo + (cells + 0.5) * step, half)
        sel = cells[hit]
        bits[sel[:, 0], sel[:, 1], sel[:, 2]] = True
    if fill_interior:
        from scipy.ndimage import binary_fill_holes
        bits = binary_fill_holes(bits)
    return grid.with_bits(bits)


_FACE_QUADS = {
    # (axis, side): corner offsets of the outward-facing quad, counter-clockwise
    (0, 0): [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)],
    (0, 1): [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)],
    (1, 0): [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)],
    (1, 1): [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)],
    (2, 0): [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)],
    (2, 1): [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
}


def voxels_to_mesh(grid: VoxelGrid) -> TriMesh:
    """Boundary faces of the occupied cells as a triangle mesh (outward winding)."""
    padded = np.pad(grid.bits, 1)
    verts, tris = [], []
    base = 0
    step = grid.spacing
    for (ax, side), quad in _FACE_QUADS.items():
        shift = [0, 0, 0]
        shift[ax] = 1 if side else -1
        neighbor = np.roll(padded, -np.array(shift), axis=(0, 1, 2))[1:-1, 1:-1, 1:-1]
        cells = np.argwhere(grid.bits & ~neighbor)
        if not len(cells):
            continue
        q = np.asarray(quad, dtype=np.float64)
        corners = grid.lo + (cells[:, None, :] + q[None]) * step  # (K, 4, 3)
        verts.append(corners.reshape(-1, 3))
        k = np.arange(len(cells))[:, None] * 4 + base
        tris.append(np.concatenate([k + [0, 1, 2], k + [0, 2, 3]], axis=0))
        base += 4 * len(cells)
    if not verts:
        raise EmptyMesh("grid has no occupied cells")
    return TriMesh(np.concatenate(verts), np.concatenate(tris))


def unit_cube_mesh(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5)) -> TriMesh:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=np.float64)
    v = lo + corners * (hi - lo)
    f = [
        (0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5),
        (0, 4, 5), (0, 5, 1), (2, 3, 7), (2, 7, 6),
        (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3),
    ]
    return TriMesh.from_arrays(v, f)


def icosphere(subdivisions: int = 3, radius: float = 0.5) -> TriMesh:
    t = (1 + 5 ** 0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.asarray(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return TriMesh.from_arrays(np.asarray(verts) * radius, f)


# --------------------------------------------------------------------------
# cameras


def look_at(center: np.ndarray, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation of a camera at ``center`` facing ``target``."""
    center = np.asarray(center, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - center
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-12:
        raise ValueError("view direction is parallel to the up vector")
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    return rot, -rot @ center


def ring_views(n: int = 70, elevation: float = 20.0, radius: float = 2.5,
               fov: float = 40.0, image_size: int = 128) -> list[View]:
    """Cameras evenly spaced in azimuth around the vertical axis, aimed at the origin.

    Azimuth 0 sits on +X; azimuth grows toward +Z.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 < fov < 180:
        raise ValueError("fov must lie in (0, 180)")
    if abs(elevation) >= 90:
        raise ValueError("elevation must lie in (-90, 90)")
    f = (image_size / 2) / math.tan(math.radians(fov) / 2)
    el = math.radians(elevation)
    views = []
    for k in range(n):
        az = 2 * math.pi * k / n
        c = radius * np.array([math.cos(el) * math.cos(az), math.sin(el), math.cos(el) * math.sin(az)])
        rot, t = look_at(c)
        views.append(View(f, f, image_size / 2, image_size / 2, image_size, image_size, rot, t))
    return views

