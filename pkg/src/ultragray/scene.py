"""Explicit 3D Gaussian scene: parameter storage, initialization and the binary scene format.

All lengths are millimetres.  Parameters are kept in an unconstrained form and
mapped to their physical meaning on demand:

* ``log_scales``  -> per-axis standard deviation ``exp(log_scales)``
* ``quaternions`` -> rotation of the normalized quaternion ``(w, x, y, z)``
* ``trans_logits`` -> transmittance ``sigmoid(trans_logits)``
* ``sh_coeffs``   -> degree-0 and degree-1 real SH echo coefficients
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, CorruptFileError, UnsupportedFormatError

SCENE_MAGIC = b"UGRAYSCN"
SCENE_VERSION = 1
_HEADER = struct.Struct("<8sIQ6ddd")

INIT_TRANSMITTANCE = 0.99
INIT_SCALE_MM = 0.5
SH0_INIT_RANGE = (0.1, 0.5)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for a stack of quaternions ``(..., 4)`` in ``(w, x, y, z)`` order.

    Quaternions are normalized first, so any nonzero quaternion yields a proper rotation.
    """
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class SceneMeta:
    """Scene-wide constants: bounding box, background echo and coverage epsilon."""

    bounding_box: np.ndarray = field(default_factory=lambda: np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]))
    background_intensity: float = 0.0
    coverage_epsilon: float = 1e-6

    def __post_init__(self):
        self.bounding_box = np.asarray(self.bounding_box, dtype=np.float64).reshape(2, 3)
        if not self.coverage_epsilon > 0:
            raise ConfigurationError("coverage_epsilon must be positive")
        if not 0.0 <= self.background_intensity <= 1.0:
            raise ConfigurationError("background_intensity must lie in [0, 1]")


@dataclass
class GaussianField:
    """Structure-of-arrays container for N anisotropic Gaussians."""

    means: np.ndarray
    log_scales: np.ndarray
    quaternions: np.ndarray
    trans_logits: np.ndarray
    sh_coeffs: np.ndarray
    meta: SceneMeta = field(default_factory=SceneMeta)

    PARAMS = ("means", "log_scales", "quaternions", "trans_logits", "sh_coeffs")

    def __post_init__(self):
        n = len(self.means)
        self.means = np.ascontiguousarray(self.means, dtype=np.float64).reshape(n, 3)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.quaternions = np.ascontiguousarray(self.quaternions, dtype=np.float64).reshape(n, 4)
        self.trans_logits = np.ascontiguousarray(self.trans_logits, dtype=np.float64).reshape(n)
        self.sh_coeffs = np.ascontiguousarray(self.sh_coeffs, dtype=np.float64).reshape(n, 4)

    def __len__(self) -> int:
        return self.means.shape[0]

    @classmethod
    def empty(cls, meta: SceneMeta | None = None) -> "GaussianField":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 4)),
                   meta=meta or SceneMeta())

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAMS}

    def copy(self) -> "GaussianField":
        meta = SceneMeta(self.meta.bounding_box.copy(), self.meta.background_intensity, self.meta.coverage_epsilon)
        return GaussianField(**{k: v.copy() for k, v in self.params().items()}, meta=meta)

    def subset(self, idx) -> "GaussianField":
        return GaussianField(**{k: v[idx].copy() for k, v in self.params().items()}, meta=self.meta)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def transmittance(self) -> np.ndarray:
        return sigmoid(self.trans_logits)

    def rotations(self) -> np.ndarray:
        return quat_to_rotmat(self.quaternions)

    def covariances(self) -> np.ndarray:
        R = self.rotations()
        M = R * self.scales[:, None, :]
        return M @ np.swapaxes(M, -1, -2)

    def normalize_quaternions(self) -> None:
        self.quaternions /= np.linalg.norm(self.quaternions, axis=1, keepdims=True)


def covariance_of(field: GaussianField, index: int) -> np.ndarray:
    """Covariance ``R S S^T R^T`` of one Gaussian."""
    n = len(field)
    if not -n <= index < n:
        raise IndexError(f"gaussian index {index} out of range for field of size {n}")
    R = quat_to_rotmat(field.quaternions[index])
    M = R * np.exp(field.log_scales[index])[None, :]
    cov = M @ M.T
    return 0.5 * (cov + cov.T)


def init_random(count: int, box, seed: int, meta: SceneMeta | None = None) -> GaussianField:
    """Uniformly scattered isotropic Gaussians inside ``box`` (``[[xmin, ymin, zmin], [xmax, ymax, zmax]]``)."""
    box = np.asarray(box, dtype=np.float64).reshape(2, 3)
    if count < 1:
        raise ConfigurationError("count must be at least 1")
    if np.any(box[1] - box[0] <= 0):
        raise ConfigurationError(f"bounding box has no volume: {box.tolist()}")
    rng = np.random.default_rng([seed, 0x5CE7E])
    means = box[0] + rng.random((count, 3)) * (box[1] - box[0])
    sh = np.zeros((count, 4))
    sh[:, 0] = rng.uniform(*SH0_INIT_RANGE, size=count)
    quats = np.zeros((count, 4))
    quats[:, 0] = 1.0
    if meta is None:
        meta = SceneMeta(bounding_box=box)
    return GaussianField(
        means=means,
        log_scales=np.full((count, 3), np.log(INIT_SCALE_MM)),
        quaternions=quats,
        trans_logits=np.full(count, logit(INIT_TRANSMITTANCE)),
        sh_coeffs=sh,
        meta=meta,
    )


def save_scene(field: GaussianField, path) -> None:
    """Write the little-endian binary scene format (see README for the byte layout)."""
    meta = field.meta
    header = _HEADER.pack(SCENE_MAGIC, SCENE_VERSION, len(field), *meta.bounding_box.ravel(),
                          float(meta.background_intensity), float(meta.coverage_epsilon))
    with open(path, "wb") as fh:
        fh.write(header)
        for name in GaussianField.PARAMS:
            fh.write(np.ascontiguousarray(getattr(field, name), dtype="<f8").tobytes())


def load_scene(path) -> GaussianField:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CorruptFileError(f"{path}: truncated header")
    magic, version, count, *rest = _HEADER.unpack_from(data)
    if magic != SCENE_MAGIC:
        raise CorruptFileError(f"{path}: bad magic {magic!r}")
    if version != SCENE_VERSION:
        raise UnsupportedFormatError(f"{path}: scene format version {version}, expected {SCENE_VERSION}")
    bbox, bkg, eps = np.array(rest[:6]).reshape(2, 3), rest[6], rest[7]
    widths = {"means": 3, "log_scales": 3, "quaternions": 4, "trans_logits": 1, "sh_coeffs": 4}
    expected = _HEADER.size + 8 * count * sum(widths.values())
    if len(data) != expected:
        raise CorruptFileError(f"{path}: expected {expected} bytes, found {len(data)}")
    arrays = {}
    offset = _HEADER.size
    for name in GaussianField.PARAMS:
        k = widths[name]
        arr = np.frombuffer(data, dtype="<f8", count=count * k, offset=offset).astype(np.float64)
        arrays[name] = arr.reshape(count, k) if k > 1 else arr
        offset += 8 * count * k
    return GaussianField(**arrays, meta=SceneMeta(bbox, bkg, eps))
