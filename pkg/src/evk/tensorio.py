"""The EVK0 binary tensor container plus PNG helpers for masks and images.

Layout (all little-endian)::

    b"EVK0" | u8 dtype code | u32 ndim | u64 dims[ndim] | payload

Only dtype code 1 (float32) exists in this version.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, DimOverflow, NonFinite, ParseError
from .geom import Mask2D, VoxelGrid

MAGIC = b"EVK0"
DTYPE_F32 = 1
_MAX_ELEMENTS = 1 << 40


@dataclass(frozen=True, eq=False)
class TensorBlob:
    dims: tuple[int, ...]
    data: np.ndarray  # float32, C order, shape == dims

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        _check_dims(dims)
        data = np.ascontiguousarray(self.data, dtype=np.float32).reshape(dims)
        if not np.isfinite(data).all():
            raise NonFinite("tensor holds non-finite values")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    @classmethod
    def of(cls, array) -> "TensorBlob":
        a = np.asarray(array, dtype=np.float32)
        return cls(a.shape, a)


def _check_dims(dims: tuple[int, ...]) -> None:
    if not dims:
        raise DimOverflow("tensor needs at least one dimension")
    total = 1
    for d in dims:
        if d <= 0:
            raise DimOverflow(f"extent {d} is not positive")
        total *= d
        if total > _MAX_ELEMENTS:
            raise DimOverflow("tensor is too large")


def encode_tensor(blob: TensorBlob) -> bytes:
    header = MAGIC + struct.pack("<BI", DTYPE_F32, len(blob.dims))
    header += struct.pack(f"<{len(blob.dims)}Q", *blob.dims)
    return header + blob.data.astype("<f4", copy=False).tobytes()


def decode_tensor(raw: bytes) -> TensorBlob:
    if raw[:4] != MAGIC:
        raise BadMagic("not an EVK0 tensor")
    if len(raw) < 9:
        raise ParseError("truncated tensor header")
    code, ndim = struct.unpack_from("<BI", raw, 4)
    if code != DTYPE_F32:
        raise ParseError(f"unsupported dtype code {code}")
    if ndim == 0 or ndim > 32:
        raise DimOverflow(f"bad rank {ndim}")
    off = 9 + 8 * ndim
    if len(raw) < off:
        raise ParseError("truncated tensor header")
    dims = struct.unpack_from(f"<{ndim}Q", raw, 9)
    _check_dims(dims)
    count = int(np.prod(dims))
    if len(raw) != off + 4 * count:
        raise ParseError("payload length does not match dims")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=off).astype(np.float32).reshape(dims)
    return TensorBlob(dims, data)


def write_tensor(path: str | Path, blob: TensorBlob | np.ndarray) -> None:
    if not isinstance(blob, TensorBlob):
        blob = TensorBlob.of(blob)
    Path(path).write_bytes(encode_tensor(blob))


def read_tensor(path: str | Path) -> TensorBlob:
    return decode_tensor(Path(path).read_bytes())


def write_grid(path: str | Path, grid: VoxelGrid) -> None:
    write_tensor(path, grid.bits.astype(np.float32))


def read_grid(path: str | Path) -> VoxelGrid:
    """Occupancy grid stored as an (R, R, R) tensor; non-zero means occupied.

    Bounds are not stored and default to the unit cube.
    """
    blob = read_tensor(path)
    if len(blob.dims) != 3 or len(set(blob.dims)) != 1:
        raise ParseError(f"expected an (R, R, R) grid, got {blob.dims}")
    return VoxelGrid(blob.data != 0)


def read_mask_png(path: str | Path) -> Mask2D:
    """8-bit PNG mask; a pixel is set when its luminance exceeds 127."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            lum = np.asarray(im.convert("L"))
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise ParseError(f"{path}: {e}") from e
    return Mask2D(lum > 127)


def write_mask_png(path: str | Path, mask: Mask2D) -> None:
    from PIL import Image

    Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L").save(path)


def read_image_png(path: str | Path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB")).copy()
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise ParseError(f"{path}: {e}") from e


def write_image_png(path: str | Path, pixels: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB").save(path)
