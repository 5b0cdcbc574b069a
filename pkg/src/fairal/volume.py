"""Dense 3D voxel grids: entropy, thresholding, dilation and the FVOL1 file format.

Volumes are plain numpy arrays indexed ``[z, y, x]``. Ravelled in C order
that is exactly the x-fastest flat layout used on disk, so the flat offset
of voxel ``(x, y, z)`` is ``z * ny * nx + y * nx + x``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.special import xlogy

FVOL_MAGIC = b"FVOL1\x00\x00\x00"
DTYPE_FLOAT32 = 0
DTYPE_UINT8 = 1

_HEADER = struct.Struct("<8s3IB")


class EmptyRegion(ValueError):
    """Raised when a mean is requested over a mask with no true voxels."""


class VolumeFormatError(ValueError):
    pass


@dataclass(frozen=True)
class VolumeShape:
    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            if v >= 2**32:
                raise ValueError(f"{name}={v} does not fit an unsigned 32-bit extent")

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def array_shape(self) -> tuple[int, int, int]:
        """numpy shape ``(nz, ny, nx)``."""
        return (self.nz, self.ny, self.nx)

    @classmethod
    def of(cls, arr: np.ndarray) -> "VolumeShape":
        if arr.ndim != 3:
            raise ValueError(f"expected a 3D array, got ndim={arr.ndim}")
        nz, ny, nx = arr.shape
        return cls(nx, ny, nz)

    def flat_index(self, x: int, y: int, z: int) -> int:
        if not (0 <= x < self.nx and 0 <= y < self.ny and 0 <= z < self.nz):
            raise IndexError(f"voxel ({x}, {y}, {z}) out of bounds for {self}")
        return z * (self.ny * self.nx) + y * self.nx + x

    def coords(self, offset: int) -> tuple[int, int, int]:
        if not 0 <= offset < self.size:
            raise IndexError(f"offset {offset} out of range for {self}")
        z, rem = divmod(offset, self.ny * self.nx)
        y, x = divmod(rem, self.nx)
        return x, y, z


def check_scalar(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    VolumeShape.of(values)
    if not np.all(np.isfinite(values)):
        raise ValueError("scalar volume contains NaN or Inf")
    return values


def check_probabilities(probs: np.ndarray) -> np.ndarray:
    probs = check_scalar(probs)
    if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    return probs


def check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    VolumeShape.of(mask)
    if mask.dtype != bool:
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("mask values must be 0/1 or boolean")
        mask = mask.astype(bool)
    return mask


def bernoulli_entropy_map(probs: np.ndarray) -> np.ndarray:
    """Voxel-wise entropy of a Bernoulli prediction, in nats (0 * ln 0 = 0)."""
    p = check_probabilities(probs)
    h = -(xlogy(p, p) + xlogy(1.0 - p, 1.0 - p))
    # rounding can push the p=0.5 case a hair past ln 2 or a saturated voxel below 0
    return np.clip(h, 0.0, np.log(2.0))


def threshold(probs: np.ndarray, t: float = 0.5) -> np.ndarray:
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {t}")
    return check_probabilities(probs) > t


_FACE_STRUCTURE = ndimage.generate_binary_structure(3, 1)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Iterated 6-connected dilation; voxels outside the grid are never set."""
    if int(radius) != radius or radius < 0:
        raise ValueError(f"radius must be a nonnegative integer, got {radius!r}")
    mask = check_mask(mask)
    # scipy treats iterations=0 as "until convergence"
    if radius == 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=_FACE_STRUCTURE, iterations=int(radius))


def masked_mean(values: np.ndarray, mask: np.ndarray) -> float:
    values = check_scalar(values)
    mask = check_mask(mask)
    if values.shape != mask.shape:
        raise ValueError(f"shape mismatch: values {values.shape} vs mask {mask.shape}")
    n = int(mask.sum())
    if n == 0:
        raise EmptyRegion("mask selects no voxels")
    return float(values[mask].sum() / n)


# --- FVOL1 ---------------------------------------------------------------


def write_fvol(path: str | Path, volume: np.ndarray) -> None:
    """Write a float (dtype tag 0) or boolean/uint8 (dtype tag 1) volume."""
    arr = np.asarray(volume)
    shape = VolumeShape.of(arr)
    if arr.dtype == bool or arr.dtype == np.uint8:
        tag = DTYPE_UINT8
        payload = np.ascontiguousarray(arr, dtype="<u1")
    elif np.issubdtype(arr.dtype, np.floating):
        tag = DTYPE_FLOAT32
        payload = np.ascontiguousarray(arr, dtype="<f4")
    else:
        raise VolumeFormatError(f"unsupported dtype {arr.dtype}")
    header = _HEADER.pack(FVOL_MAGIC, shape.nx, shape.ny, shape.nz, tag)
    Path(path).write_bytes(header + payload.tobytes(order="C"))


def read_fvol(path: str | Path) -> np.ndarray:
    """Read an FVOL1 file; masks come back as bool, scalars as float64."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise VolumeFormatError(f"{path}: truncated header")
    magic, nx, ny, nz, tag = _HEADER.unpack_from(raw)
    if magic != FVOL_MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {magic!r}")
    shape = VolumeShape(nx, ny, nz)
    if tag == DTYPE_FLOAT32:
        dtype, width = np.dtype("<f4"), 4
    elif tag == DTYPE_UINT8:
        dtype, width = np.dtype("<u1"), 1
    else:
        raise VolumeFormatError(f"{path}: unknown dtype tag {tag}")
    body = raw[_HEADER.size:]
    if len(body) != shape.size * width:
        raise VolumeFormatError(
            f"{path}: payload has {len(body)} bytes, expected {shape.size * width}"
        )
    arr = np.frombuffer(body, dtype=dtype).reshape(shape.array_shape)
    if tag == DTYPE_UINT8:
        return arr.astype(bool)
    return arr.astype(np.float64)
