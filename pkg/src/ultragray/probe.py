"""Linear-array transducer geometry, poses, scan-line rays and far-plane culling.

Probe-frame convention: x lateral, y elevational, z axial (depth).  A pose maps
probe-frame coordinates to world coordinates: ``p_world = R @ p_probe + t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, PoseError
from .quadrature import cull_radius
from .scene import GaussianField

POSE_TOL = 1e-9


@dataclass(frozen=True)
class ProbeGeometry:
    lateral_width: float
    imaging_depth: float
    n_scanlines: int
    n_depth_samples: int
    elevational_slab: float = 0.5

    def __post_init__(self):
        for name in ("lateral_width", "imaging_depth", "n_scanlines", "n_depth_samples", "elevational_slab"):
            value = getattr(self, name)
            if not value > 0:
                raise ConfigurationError(f"probe geometry field {name} must be positive, got {value}")

    @property
    def lateral_pitch(self) -> float:
        return self.lateral_width / self.n_scanlines

    @property
    def axial_pitch(self) -> float:
        return self.imaging_depth / self.n_depth_samples

    @property
    def shape(self) -> tuple[int, int]:
        """Image shape ``(rows, cols) = (depth samples, scan lines)``."""
        return self.n_depth_samples, self.n_scanlines

    def lateral_positions(self) -> np.ndarray:
        return (np.arange(self.n_scanlines) + 0.5) * self.lateral_pitch - 0.5 * self.lateral_width

    def depths(self) -> np.ndarray:
        return (np.arange(self.n_depth_samples) + 0.5) * self.axial_pitch


@dataclass(frozen=True)
class Pose:
    """Rigid probe-to-world transform."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3) or not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise PoseError("pose needs a finite 3x3 rotation and 3-vector translation")
        if np.max(np.abs(R.T @ R - np.eye(3))) > POSE_TOL:
            raise PoseError("pose rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > POSE_TOL:
            raise PoseError("pose rotation has determinant != 1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "Pose":
        M = np.asarray(M, dtype=np.float64).reshape(4, 4)
        if np.max(np.abs(M[3] - [0, 0, 0, 1])) > POSE_TOL:
            raise PoseError("bottom row of a rigid transform must be (0, 0, 0, 1)")
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def to_probe(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    @property
    def lateral_axis(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def elevational_axis(self) -> np.ndarray:
        return self.rotation[:, 1]

    @property
    def axial_axis(self) -> np.ndarray:
        return self.rotation[:, 2]


def rotation_about(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle_rad) * K + (1 - np.cos(angle_rad)) * K @ K


@dataclass(frozen=True)
class RayBundle:
    """One ray per scan line, all sharing the axial direction of the pose.

    ``lateral`` and ``elevation`` are the probe-frame coordinates of each origin on
    the transducer face (``elevation`` is nonzero only after perturbation).
    """

    origins: np.ndarray
    direction: np.ndarray
    segment_length: float
    depth_samples: np.ndarray
    pose: Pose
    lateral: np.ndarray
    elevation: np.ndarray

    @property
    def n_rays(self) -> int:
        return self.origins.shape[0]

    def pixel_points(self) -> np.ndarray:
        """World coordinates of every pixel, shape ``(n_depth, n_rays, 3)``."""
        return self.origins[None, :, :] + self.depth_samples[:, None, None] * self.direction


def make_rays(geometry: ProbeGeometry, pose: Pose) -> RayBundle:
    if not isinstance(pose, Pose):
        raise PoseError(f"expected a Pose, got {type(pose).__name__}")
    lateral = geometry.lateral_positions()
    local = np.zeros((geometry.n_scanlines, 3))
    local[:, 0] = lateral
    return RayBundle(
        origins=pose.apply(local),
        direction=pose.axial_axis.copy(),
        segment_length=float(geometry.imaging_depth),
        depth_samples=geometry.depths(),
        pose=pose,
        lateral=lateral,
        elevation=np.zeros(geometry.n_scanlines),
    )


def sample_cosine_offsets(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``u`` in [-1, 1] with density proportional to ``cos(pi u / 2)``.

    Inverse CDF of ``F(u) = (1 + sin(pi u / 2)) / 2``.
    """
    return (2.0 / np.pi) * np.arcsin(2.0 * rng.random(n) - 1.0)


def perturb_out_of_plane(bundle: RayBundle, delta_max: float, seed) -> RayBundle:
    """Shift every ray origin along the elevational axis by an i.i.d. cosine-weighted offset."""
    if delta_max < 0:
        raise ConfigurationError("delta_max must be non-negative")
    if delta_max == 0:
        return bundle
    rng = np.random.default_rng(seed)
    offsets = sample_cosine_offsets(bundle.n_rays, rng) * delta_max
    origins = bundle.origins + offsets[:, None] * bundle.pose.elevational_axis[None, :]
    return replace(bundle, origins=origins, elevation=bundle.elevation + offsets)


def ray_pairs(field: GaussianField, bundle: RayBundle, geometry: ProbeGeometry, cull: bool = True):
    """(ray, Gaussian) pairs that may contribute, grouped by ray.

    Returns ``(ray_ptr, gids)``: pairs of ray ``k`` are ``gids[ray_ptr[k]:ray_ptr[k + 1]]``,
    ascending in Gaussian id.  Each Gaussian's Mahalanobis cutoff ellipsoid is projected
    orthographically along the ray direction onto the far plane; its axis-aligned extent
    is tested against a rectangle per scan line (one lateral pitch wide, twice the
    elevational slab high) centred on the ray.
    """
    n, K = len(field), bundle.n_rays
    if n == 0:
        return np.zeros(K + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if not cull:
        gids = np.tile(np.arange(n, dtype=np.int64), K)
        return np.arange(K + 1, dtype=np.int64) * n, gids

    pose = bundle.pose
    cov = field.covariances()
    axes = pose.rotation  # columns: lateral, elevational, axial
    var = np.einsum("ia,nij,ja->na", axes, cov, axes)
    sd = np.sqrt(np.maximum(var, 0.0))
    radius = cull_radius(field.scales.max(axis=1))
    ext = radius[:, None] * sd
    center = pose.to_probe(field.means)

    pitch = geometry.lateral_pitch
    slab = geometry.elevational_slab
    ell = bundle.segment_length
    elev = bundle.elevation
    keep = (center[:, 2] + ext[:, 2] >= 0.0) & (center[:, 2] - ext[:, 2] <= ell)
    keep &= (center[:, 1] + ext[:, 1] + slab >= elev.min()) & (center[:, 1] - ext[:, 1] - slab <= elev.max())

    x0 = bundle.lateral[0]
    lo = np.ceil((center[:, 0] - ext[:, 0] - 0.5 * pitch - x0) / pitch - 1e-9).astype(np.int64)
    hi = np.floor((center[:, 0] + ext[:, 0] + 0.5 * pitch - x0) / pitch + 1e-9).astype(np.int64)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, K - 1)
    keep &= hi >= lo
    ids = np.nonzero(keep)[0]
    counts = hi[ids] - lo[ids] + 1
    gids = np.repeat(ids, counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    rays = np.repeat(lo[ids], counts) + (np.arange(gids.size) - starts)
    # exact per-ray tests (lateral margin absorbs the rounding slack above)
    ok = np.abs(bundle.lateral[rays] - center[gids, 0]) <= ext[gids, 0] + 0.5 * pitch + 1e-9
    ok &= np.abs(elev[rays] - center[gids, 1]) <= ext[gids, 1] + slab
    gids, rays = gids[ok], rays[ok]
    order = np.argsort(rays, kind="stable")
    gids, rays = gids[order], rays[order]
    ray_ptr = np.zeros(K + 1, dtype=np.int64)
    np.cumsum(np.bincount(rays, minlength=K), out=ray_ptr[1:])
    return ray_ptr, gids


def cull_gaussians(field: GaussianField, geometry: ProbeGeometry, pose: Pose,
                   bundle: RayBundle | None = None) -> np.ndarray:
    """Sorted ids of Gaussians whose far-plane footprint overlaps any scan-line rectangle."""
    if bundle is None:
        bundle = make_rays(geometry, pose)
    _, gids = ray_pairs(field, bundle, geometry)
    return np.unique(gids)
