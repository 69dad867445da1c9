"""Classical baselines: scatter compounding of tracked frames and trilinear re-slicing."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, CorruptFileError
from .probe import Pose, ProbeGeometry

MODES = ("median", "max")


@dataclass
class VoxelVolume:
    origin: np.ndarray      # world position of the corner of voxel (0, 0, 0)
    spacing: float
    data: np.ndarray        # (nx, ny, nz)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if not self.spacing > 0:
            raise ContractError("voxel spacing must be positive")

    @property
    def dims(self) -> tuple:
        return tuple(self.data.shape)

    def centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.data.shape[axis]) + 0.5) * self.spacing


def pixel_points(geometry: ProbeGeometry, pose: Pose) -> np.ndarray:
    """World coordinates of every pixel, ``(H, K, 3)``."""
    x = geometry.lateral_positions()
    z = geometry.depths()
    local = np.zeros(geometry.shape + (3,))
    local[..., 0] = x[None, :]
    local[..., 2] = z[:, None]
    return pose.apply(local)


def _group_stat(keys, values, mode):
    order = np.lexsort((values, keys))
    k, v = keys[order], values[order]
    starts = np.flatnonzero(np.r_[True, k[1:] != k[:-1]])
    counts = np.diff(np.r_[starts, k.size])
    if mode == "max":
        return k[starts], v[starts + counts - 1]
    lo = starts + (counts - 1) // 2
    hi = starts + counts // 2
    return k[starts], 0.5 * (v[lo] + v[hi])


def compound(frames, geometry: ProbeGeometry, mode: str = "median", spacing: float = 0.25) -> VoxelVolume:
    """Scatter every pixel into the voxel that contains it and reduce per voxel.

    The grid is aligned so the lowest pixel point sits at a voxel centre.  Untouched
    voxels stay 0; the even-count median is the mean of the two middle samples.
    """
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
    frames = list(frames)
    if not frames:
        raise ContractError("compounding needs at least one frame")
    if not spacing > 0:
        raise ContractError("voxel spacing must be positive")
    pts = np.stack([pixel_points(geometry, pose) for _, pose in frames]).reshape(-1, 3)
    vals = np.stack([np.asarray(img, dtype=np.float64) for img, _ in frames]).reshape(-1)
    origin = pts.min(axis=0) - 0.5 * spacing
    idx = np.floor((pts - origin) / spacing).astype(np.int64)
    dims = idx.max(axis=0) + 1
    flat = np.ravel_multi_index(idx.T, dims)
    keys, stat = _group_stat(flat, vals, mode)
    data = np.zeros(int(np.prod(dims)))
    data[keys] = stat
    return VoxelVolume(origin, float(spacing), data.reshape(tuple(dims)))


def trilinear(volume: VoxelVolume, points) -> np.ndarray:
    """Trilinear interpolation between voxel centres; 0 outside the centre lattice."""
    pts = np.asarray(points, dtype=np.float64)
    shape = pts.shape[:-1]
    c = (pts.reshape(-1, 3) - volume.origin) / volume.spacing - 0.5
    dims = np.array(volume.data.shape)
    tol = 1e-9
    inside = np.all((c >= -tol) & (c <= dims - 1 + tol), axis=1)
    c = np.clip(c, 0.0, dims - 1)
    i0 = np.minimum(np.floor(c).astype(np.int64), np.maximum(dims - 2, 0))
    f = c - i0
    i1 = np.minimum(i0 + 1, dims - 1)
    out = np.zeros(len(c))
    d = volume.data
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        ix = i1[:, 0] if dx else i0[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            iy = i1[:, 1] if dy else i0[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                iz = i1[:, 2] if dz else i0[:, 2]
                out += wx * wy * wz * d[ix, iy, iz]
    out[~inside] = 0.0
    return out.reshape(shape)


def reslice(volume: VoxelVolume, geometry: ProbeGeometry, pose: Pose) -> np.ndarray:
    return trilinear(volume, pixel_points(geometry, pose))


def save_volume(volume: VoxelVolume, path) -> None:
    """Raw little-endian float32 in C order (x slowest) plus a ``.txt`` sidecar."""
    path = Path(path)
    path.write_bytes(volume.data.astype("<f4").tobytes())
    o = [float(x) for x in volume.origin]
    path.with_suffix(".txt").write_text(
        f"origin = {o[0]!r} {o[1]!r} {o[2]!r}\nspacing = {float(volume.spacing)!r}\n"
        f"dims = {' '.join(str(n) for n in volume.dims)}\ndtype = float32-le\norder = C\n")


def load_volume(path) -> VoxelVolume:
    path = Path(path)
    meta = {}
    for line in path.with_suffix(".txt").read_text().splitlines():
        k, _, v = line.partition("=")
        meta[k.strip()] = v.strip()
    dims = tuple(int(n) for n in meta["dims"].split())
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != int(np.prod(dims)):
        raise CorruptFileError(f"{path}: {raw.size} voxels on disk, sidecar says {dims}")
    origin = [float(x) for x in meta["origin"].split()]
    return VoxelVolume(origin, float(meta["spacing"]), raw.reshape(dims).astype(np.float64))
